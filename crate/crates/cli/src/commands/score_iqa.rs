use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sfd_core::correlation::correlate;
use sfd_core::image::ImageTensor;
use sfd_core::iqa::{fixed_prompt_pair, sfd_iqa_score, IqaConfig, IqaModel};
use sfd_core::training::load_checkpoint;

use super::correlate::read_columns;
use super::{file_label, fit_to_stride, resolve_images, write_csv};
use crate::error::{CliError, CliResult};
use crate::CommandResult;

#[derive(Debug, Serialize)]
pub struct IqaRow {
    pub image: String,
    pub s_d: f64,
    /// Empty when no text embedder is configured.
    pub s_o: Option<f64>,
    pub s_lp: f64,
    pub s_aver: f64,
    pub mean_sigmoid: f64,
}

#[derive(Debug, Serialize)]
pub struct CorrelationRow {
    pub n: usize,
    pub plcc: f64,
    pub srcc: f64,
    pub krcc: f64,
}

/// `scores.csv` gives `scores_correlation.csv`.
pub fn correlation_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_correlation.csv"))
}

pub fn run(
    checkpoint: &Path,
    images: &Path,
    out: &Path,
    alpha1: Option<f64>,
    alpha2: Option<f64>,
    opinions: Option<&Path>,
) -> CliResult<CommandResult> {
    let defaults = IqaConfig::default();
    let cfg = IqaConfig {
        alpha1: alpha1.unwrap_or(defaults.alpha1),
        alpha2: alpha2.unwrap_or(defaults.alpha2),
        ..defaults
    };
    cfg.validate()?;
    let paths = resolve_images(images)?;
    let ck = load_checkpoint(checkpoint)?;
    let model = IqaModel {
        encoder: &ck.encoder,
        feat_d: &ck.state.feat_d,
        lpp: &ck.state.lpp,
        text: ck.text.as_ref(),
    };
    if fixed_prompt_pair(&cfg, model.text)?.is_none() && cfg.alpha1 > 0.0 {
        log::warn!("checkpoint has no text embedder: fixed-prompt score unavailable, using alpha = (0, 1)");
    }
    let stride = ck.encoder.coarsest_stride();
    let mut warnings = 0;
    let mut rows = Vec::new();
    for path in &paths {
        let scored = ImageTensor::load(path)
            .map_err(CliError::from)
            .and_then(|img| fit_to_stride(img, stride))
            .and_then(|img| Ok(sfd_iqa_score(&img, &model, &cfg)?));
        match scored {
            Ok(r) => rows.push(IqaRow {
                image: file_label(path),
                s_d: r.s_d,
                s_o: r.s_o,
                s_lp: r.s_lp,
                s_aver: r.s_aver,
                mean_sigmoid: r.mean_sigmoid_matrix,
            }),
            Err(e) => {
                log::warn!("{}: {e}, skipped", path.display());
                warnings += 1;
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("no image under {} could be scored", images.display())));
    }
    write_csv(out, &rows)?;
    let mut artifacts = vec![out.to_path_buf()];
    let mut summary = serde_json::json!({
        "images": rows.len(),
        "alpha": [cfg.alpha1, cfg.alpha2],
        "mean_s_d": rows.iter().map(|r| r.s_d).sum::<f64>() / rows.len() as f64,
    });
    if let Some(op) = opinions {
        let table = read_columns(op, &["image", "opinion"])?;
        let opinion: HashMap<&str, f64> = table
            .iter()
            .map(|r| Ok((r[0].as_str(), parse(op, &r[1])?)))
            .collect::<CliResult<_>>()?;
        let (mut pred, mut mos) = (Vec::new(), Vec::new());
        for row in &rows {
            match opinion.get(row.image.as_str()) {
                Some(&o) => {
                    pred.push(row.s_d);
                    mos.push(o);
                }
                None => {
                    log::warn!("{}: no opinion score, left out of the correlation", row.image);
                    warnings += 1;
                }
            }
        }
        let c = correlate(&pred, &mos)?;
        let path = correlation_path(out);
        write_csv(
            &path,
            &[CorrelationRow {
                n: c.n,
                plcc: c.plcc,
                srcc: c.srcc,
                krcc: c.krcc,
            }],
        )?;
        artifacts.push(path);
        summary["correlation"] = serde_json::to_value(c).expect("report serializes");
    }
    Ok(CommandResult::ok("score-iqa", artifacts, warnings, summary))
}

fn parse(path: &Path, field: &str) -> CliResult<f64> {
    field.trim().parse().map_err(|_| CliError::Table {
        path: path.to_path_buf(),
        message: format!("`{field}` is not a number"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_sidecar_name() {
        assert_eq!(correlation_path(Path::new("out/scores.csv")), Path::new("out/scores_correlation.csv"));
    }
}
