pub mod correlate;
pub mod dump_features;
pub mod eval_sr;
pub mod score_iqa;
pub mod train;

use std::path::{Path, PathBuf};

use serde::Serialize;
use sfd_core::image::ImageTensor;
use sfd_core::training::corpus::list_pngs;
use sfd_core::training::synth_corpus as write_synth_corpus;
use sfd_core::SfdError;

use crate::error::{CliError, CliResult};
use crate::CommandResult;

/// PNGs of a directory (sorted), a single PNG, or the paths listed in a
/// manifest (one per line, `#` comments, relative to the manifest).
pub fn resolve_images(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_dir() {
        return Ok(list_pngs(path)?);
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return Ok(vec![path.to_path_buf()]);
    }
    let text = std::fs::read_to_string(path).map_err(|e| SfdError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Center crop to the largest size divisible by `stride`.
pub fn fit_to_stride(img: ImageTensor, stride: usize) -> CliResult<ImageTensor> {
    let (h, w) = (img.height() / stride * stride, img.width() / stride * stride);
    if h == 0 || w == 0 {
        return Err(SfdError::InvalidImage(format!(
            "{}x{} is smaller than the encoder stride {stride}",
            img.height(),
            img.width()
        ))
        .into());
    }
    if (h, w) == (img.height(), img.width()) {
        return Ok(img);
    }
    Ok(img.crop((img.height() - h) / 2, (img.width() - w) / 2, h, w)?)
}

pub fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SfdError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| SfdError::io(path, e))?;
    Ok(())
}

pub fn synth_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> CliResult<CommandResult> {
    if count == 0 || size < 16 {
        return Err(CliError::Usage("synth-corpus needs count >= 1 and size >= 16".into()));
    }
    let paths = write_synth_corpus(dir, count, size, seed)?;
    Ok(CommandResult::ok(
        "synth-corpus",
        paths,
        0,
        serde_json::json!({ "count": count, "size": size, "seed": seed }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths_resolve_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("list.txt");
        std::fs::write(&m, "# images\na.png\n\nsub/b.png\n").unwrap();
        let got = resolve_images(&m).unwrap();
        assert_eq!(got, vec![dir.path().join("a.png"), dir.path().join("sub/b.png")]);
    }

    #[test]
    fn stride_fit_center_crops() {
        let img = ImageTensor::filled(37, 50, 0.5).unwrap();
        let out = fit_to_stride(img, 16).unwrap();
        assert_eq!((out.height(), out.width()), (32, 48));
        assert!(fit_to_stride(ImageTensor::filled(8, 40, 0.5).unwrap(), 16).is_err());
    }
}
