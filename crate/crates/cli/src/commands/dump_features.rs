use std::path::{Path, PathBuf};

use sfd_core::archive::Archive;
use sfd_core::features::{available_taps, check_tap, pooled_features};
use sfd_core::image::ImageTensor;
use sfd_core::training::load_checkpoint;

use super::{file_label, fit_to_stride, resolve_images};
use crate::error::{CliError, CliResult};
use crate::CommandResult;

pub const FEATURES_KIND: &str = "sfd-features";

/// Tensor name for the `i`-th image.
pub fn entry_name(i: usize, path: &Path) -> String {
    format!("{i:04}:{}", file_label(path))
}

pub fn run(checkpoint: &Path, inputs: &[PathBuf], tap: &str, out: Option<&Path>, list: bool) -> CliResult<CommandResult> {
    let ck = load_checkpoint(checkpoint)?;
    let taps = available_taps(&ck.encoder, &ck.state.feat_d);
    if list {
        return Ok(CommandResult::ok("dump-features", Vec::new(), 0, serde_json::json!({ "taps": taps })));
    }
    let out = out.ok_or_else(|| CliError::Usage("--out is required".into()))?;
    check_tap(tap, &ck.encoder, &ck.state.feat_d)?;
    let mut paths = Vec::new();
    for input in inputs {
        paths.extend(resolve_images(input)?);
    }
    if paths.is_empty() {
        return Err(CliError::Usage("no images given".into()));
    }
    let stride = ck.encoder.coarsest_stride();
    let names: Vec<String> = paths.iter().enumerate().map(|(i, p)| entry_name(i, p)).collect();
    let mut archive = Archive::new(
        FEATURES_KIND,
        serde_json::json!({
            "tap": tap,
            "pooling": "spatial mean",
            "images": names,
            "checkpoint_step": ck.meta.step,
            "config_hash": ck.meta.config_hash,
        }),
    );
    for (name, path) in names.iter().zip(&paths) {
        let img = fit_to_stride(ImageTensor::load(path)?, stride)?;
        let v = pooled_features(&img, &ck.encoder, &ck.state.feat_d, tap)?;
        archive.push(name.clone(), v.into_dyn());
    }
    archive.save(out)?;
    Ok(CommandResult::ok(
        "dump-features",
        vec![out.to_path_buf()],
        0,
        serde_json::json!({ "tap": tap, "vectors": names.len() }),
    ))
}
