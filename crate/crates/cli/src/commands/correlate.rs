use std::path::Path;

use sfd_core::correlation::correlate;

use crate::error::{CliError, CliResult};
use crate::CommandResult;

/// Reads the named columns of a headed CSV, row by row.
pub fn read_columns(path: &Path, names: &[&str]) -> CliResult<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let headers = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers.iter().position(|h| h.trim() == *n).ok_or_else(|| CliError::Table {
                path: path.to_path_buf(),
                message: format!(
                    "no column `{n}`; columns are: {}",
                    headers.iter().collect::<Vec<_>>().join(", ")
                ),
            })
        })
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        rows.push(idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect());
    }
    Ok(rows)
}

pub fn run(path: &Path, x: &str, y: &str) -> CliResult<CommandResult> {
    let rows = read_columns(path, &[x, y])?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut skipped = 0;
    for row in &rows {
        match (row[0].trim().parse::<f64>(), row[1].trim().parse::<f64>()) {
            (Ok(a), Ok(b)) => {
                xs.push(a);
                ys.push(b);
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: {skipped} non-numeric rows skipped", path.display());
    }
    let report = correlate(&xs, &ys)?;
    Ok(CommandResult::ok(
        "correlate",
        Vec::new(),
        skipped,
        serde_json::to_value(report).expect("report serializes"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_summary_rows_and_names_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "image,a,b\nx,1,2\ny,2,4\nz,3,5\nmean,,\n").unwrap();
        let res = run(&p, "a", "b").unwrap();
        assert_eq!(res.warnings, 1);
        assert!((res.summary["srcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        let err = run(&p, "a", "c").unwrap_err();
        assert!(err.to_string().contains("no column `c`"), "{err}");
    }
}
