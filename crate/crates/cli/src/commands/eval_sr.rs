use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sfd_core::encoders::encode_image;
use sfd_core::feat_disc::feat_d_forward;
use sfd_core::generator::super_resolve;
use sfd_core::image::ImageTensor;
use sfd_core::metrics::fidelity;
use sfd_core::training::corpus::list_pngs;
use sfd_core::training::load_checkpoint;

use super::{file_label, fit_to_stride, write_csv};
use crate::error::{CliError, CliResult};
use crate::CommandResult;

/// One CSV row; the last row is the mean over scored images.
#[derive(Debug, Serialize)]
pub struct SrRow {
    pub image: String,
    /// Y-channel PSNR with a `scale`-pixel border cropped; capped for exact matches.
    pub psnr_db: f64,
    pub exact_match: bool,
    pub ssim: f64,
    /// Mean sigmoid of Feat-D on the SR image (perception axis of the
    /// perception-distortion scatter).
    pub d_score: f64,
}

pub fn run(checkpoint: &Path, lr_dir: &Path, hr_dir: &Path, out: &Path) -> CliResult<CommandResult> {
    let ck = load_checkpoint(checkpoint)?;
    let scale = ck.state.generator.scale();
    let stride = ck.encoder.coarsest_stride();
    let hr: BTreeMap<String, _> = list_pngs(hr_dir)?.into_iter().map(|p| (file_label(&p), p)).collect();
    let mut warnings = 0;
    let mut rows = Vec::new();
    for lr_path in list_pngs(lr_dir)? {
        let name = file_label(&lr_path);
        let Some(hr_path) = hr.get(&name) else {
            log::warn!("{}: no HR image of the same name, skipped", lr_path.display());
            warnings += 1;
            continue;
        };
        match score_pair(&lr_path, hr_path, &ck, scale, stride) {
            Ok((psnr, exact_match, ssim, d_score)) => rows.push(SrRow {
                image: name,
                psnr_db: psnr,
                exact_match,
                ssim,
                d_score,
            }),
            Err(e) => {
                log::warn!("{name}: {e}, skipped");
                warnings += 1;
            }
        }
    }
    for name in hr.keys().filter(|n| !lr_dir.join(n).exists()) {
        log::warn!("{}: no LR image of the same name, skipped", hr_dir.join(name).display());
        warnings += 1;
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "no LR/HR pairs could be scored from {} and {}",
            lr_dir.display(),
            hr_dir.display()
        )));
    }
    let n = rows.len() as f64;
    let mean = SrRow {
        image: "mean".into(),
        psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        exact_match: rows.iter().all(|r| r.exact_match),
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        d_score: rows.iter().map(|r| r.d_score).sum::<f64>() / n,
    };
    let summary = serde_json::json!({
        "pairs": rows.len(),
        "mean_psnr_db": mean.psnr_db,
        "mean_ssim": mean.ssim,
        "mean_d_score": mean.d_score,
    });
    rows.push(mean);
    write_csv(out, &rows)?;
    Ok(CommandResult::ok("eval-sr", vec![out.to_path_buf()], warnings, summary))
}

fn score_pair(
    lr_path: &Path,
    hr_path: &Path,
    ck: &sfd_core::training::Checkpoint,
    scale: usize,
    stride: usize,
) -> CliResult<(f64, bool, f64, f64)> {
    let lr = ImageTensor::load(lr_path)?;
    let hr = ImageTensor::load(hr_path)?;
    if (lr.height() * scale, lr.width() * scale) != (hr.height(), hr.width()) {
        return Err(CliError::Usage(format!(
            "LR {}x{} times scale {scale} does not match HR {}x{}",
            lr.height(),
            lr.width(),
            hr.height(),
            hr.width()
        )));
    }
    let sr = super_resolve(&lr, &ck.state.generator)?;
    let (psnr, ssim) = fidelity(&sr, &hr, scale)?;
    let (pyr, _) = encode_image(&fit_to_stride(sr, stride)?, &ck.encoder)?;
    let d = feat_d_forward(&pyr, &ck.state.feat_d)?.mean_sigmoid();
    Ok((psnr.db, psnr.exact_match, ssim, d))
}
