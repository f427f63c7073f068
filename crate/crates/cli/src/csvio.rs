//! CSV ingestion and emission for survival datasets.
//!
//! The header row is required; the time and status columns are selected by
//! name and every remaining column becomes a covariate in header order.
//! Numeric output uses 17 significant digits so a write/load round trip is
//! bit-exact. Lines starting with `#` are treated as comments.

use std::path::Path;

use coxdebias_core::data::{validate_parts, SurvivalDataset};
use coxdebias_core::linalg::Mat;

use crate::{CliError, CliResult};

/// A dataset together with the covariate labels it was loaded with.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: SurvivalDataset,
    pub covariate_names: Vec<String>,
}

/// Loads a survival dataset from a headered CSV file.
pub fn load_csv(path: &Path, time_col: &str, status_col: &str) -> CliResult<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(CliError::Parse(format!("{}: empty file", path.display())));
    }
    let time_idx = headers
        .iter()
        .position(|h| h == time_col)
        .ok_or_else(|| CliError::Parse(format!("missing column `{time_col}`")))?;
    let status_idx = headers
        .iter()
        .position(|h| h == status_col)
        .ok_or_else(|| CliError::Parse(format!("missing column `{status_col}`")))?;
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != time_idx && i != status_idx)
        .collect();
    let covariate_names: Vec<String> = covariate_cols
        .iter()
        .map(|&i| headers[i].clone())
        .collect();

    let mut times = Vec::new();
    let mut status = Vec::new();
    let mut data = Vec::new();
    for (row_num, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse(format!("row {}: {e}", row_num + 1)))?;
        let parse = |idx: usize| -> CliResult<f64> {
            let cell = record.get(idx).unwrap_or("");
            cell.parse::<f64>().map_err(|_| {
                CliError::Parse(format!(
                    "non-numeric cell at row {}, column `{}`: `{cell}`",
                    row_num + 1,
                    headers[idx]
                ))
            })
        };
        times.push(parse(time_idx)?);
        status.push(parse(status_idx)?);
        for &c in &covariate_cols {
            data.push(parse(c)?);
        }
    }
    if times.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let covariates = Mat::from_vec(times.len(), covariate_cols.len(), data);
    let report = validate_parts(&times, &status, &covariates);
    if !report.is_empty() {
        // report-style output: one JSON object per line
        let lines: Vec<String> = report
            .issues
            .iter()
            .map(|issue| serde_json::to_string(issue).unwrap_or_else(|_| format!("{issue:?}")))
            .collect();
        return Err(CliError::Validation(format!(
            "{}:\n{}",
            path.display(),
            lines.join("\n")
        )));
    }
    let dataset = SurvivalDataset::new(times, status, covariates)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(LoadedCsv {
        dataset,
        covariate_names,
    })
}

/// Serializes a dataset back to CSV with 17-significant-digit numerics.
pub fn write_csv(
    path: &Path,
    dataset: &SurvivalDataset,
    names: &[String],
    time_col: &str,
    status_col: &str,
) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(time_col);
    out.push(',');
    out.push_str(status_col);
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..dataset.n() {
        out.push_str(&format_float(dataset.times()[i]));
        out.push(',');
        out.push_str(&format!("{}", dataset.status()[i]));
        for &v in dataset.covariate_row(i) {
            out.push(',');
            out.push_str(&format_float(v));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// 17 significant digits: enough for an exact f64 round trip.
pub fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // keep integers human-readable
        format!("{v}")
    } else {
        format!("{v:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(contents: &str) -> std::path::PathBuf {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let mut path = std::env::temp_dir();
        path.push(format!(
            "coxdebias-csv-test-{}-{}.csv",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_basic_csv() {
        let path = temp_file("time,status,x1\n1,1,0.5\n2,0,-0.5\n");
        let loaded = load_csv(&path, "time", "status").unwrap();
        assert_eq!(loaded.dataset.n(), 2);
        assert_eq!(loaded.dataset.p(), 1);
        assert_eq!(loaded.dataset.times(), &[1.0, 2.0]);
        assert_eq!(loaded.dataset.status(), &[1, 0]);
        assert_eq!(loaded.covariate_names, vec!["x1"]);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn missing_status_column_is_parse_error() {
        let path = temp_file("time,x1\n1,0.5\n2,-0.5\n");
        let err = load_csv(&path, "time", "status").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("status"));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn status_two_is_validation_error() {
        let path = temp_file("time,status,x1\n1,1,0.5\n2,2,-0.5\n");
        let err = load_csv(&path, "time", "status").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("InvalidStatus"));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let path = temp_file("time,status,x1\n1,1,abc\n2,0,-0.5\n");
        let err = load_csv(&path, "time", "status").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("x1"), "{msg}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn write_then_load_round_trips_bit_exactly() {
        let ds = coxdebias_testkit::random_dataset(25, 3, 1.0, 42);
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut path = std::env::temp_dir();
        path.push(format!("coxdebias-roundtrip-{}.csv", std::process::id()));
        write_csv(&path, &ds, &names, "time", "status").unwrap();
        let loaded = load_csv(&path, "time", "status").unwrap();
        assert_eq!(loaded.dataset.n(), ds.n());
        for i in 0..ds.n() {
            assert_eq!(loaded.dataset.times()[i].to_bits(), ds.times()[i].to_bits());
            for j in 0..ds.p() {
                assert_eq!(
                    loaded.dataset.covariate_row(i)[j].to_bits(),
                    ds.covariate_row(i)[j].to_bits()
                );
            }
        }
        std::fs::remove_file(path).ok();
    }
}
