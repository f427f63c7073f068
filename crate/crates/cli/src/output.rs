//! JSON and CSV emission. JSON payloads are wrapped with the schema
//! version and the manifest digest; CSV files carry the digest in a
//! leading `#` comment line and print numerics at 17 significant digits.

use std::path::Path;

use coxdebias_core::inference::CoefficientTable;
use coxdebias_core::sim::SimSummary;
use serde::Serialize;

use crate::csvio::format_float;
use crate::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    manifest_digest: String,
    #[serde(flatten)]
    payload: T,
}

/// Writes a JSON result file referencing its manifest.
pub fn write_json<T: Serialize>(path: &Path, digest: &str, name: &str, payload: T) -> CliResult<()> {
    let wrapped = Envelope {
        schema_version: crate::manifest::SCHEMA_VERSION,
        manifest_digest: digest.to_string(),
        payload: NamedPayload {
            name: name.to_string(),
            value: payload,
        },
    };
    let text =
        serde_json::to_string_pretty(&wrapped).map_err(|e| CliError::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct NamedPayload<T: Serialize> {
    name: String,
    #[serde(flatten)]
    value: T,
}

pub fn csv_header(digest: &str) -> String {
    format!("# manifest: {digest}\n")
}

/// Tidy per-method, per-target summary CSV.
pub fn write_summary_csv(
    path: &Path,
    digest: &str,
    summaries: &[(Option<f64>, &SimSummary)],
) -> CliResult<()> {
    let mut out = csv_header(digest);
    out.push_str("gamma,method,target,truth,bias,coverage,mean_se,mse,used,failures,replications\n");
    for (gamma, summary) in summaries {
        for row in &summary.rows {
            let gamma_txt = gamma.map_or_else(|| "cv".to_string(), format_float);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                gamma_txt,
                row.method,
                row.target,
                format_float(row.truth),
                format_float(row.bias),
                row.coverage.map_or_else(|| "".into(), format_float),
                row.mean_se.map_or_else(|| "".into(), format_float),
                format_float(row.mse),
                row.used,
                row.failures,
                summary.replications,
            ));
        }
        for row in &summary.joint_rows {
            let gamma_txt = gamma.map_or_else(|| "cv".to_string(), format_float);
            out.push_str(&format!(
                "{},{},{},,{},{},,,{},{},{}\n",
                gamma_txt,
                row.method,
                row.target,
                format_float(row.rejection_rate),
                format_float(row.wald_rejection_rate),
                row.used,
                row.failures,
                summary.replications,
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Coefficient table as CSV.
pub fn write_coefficients_csv(path: &Path, digest: &str, table: &CoefficientTable) -> CliResult<()> {
    let mut out = csv_header(digest);
    out.push_str("label,estimate,se,p_value,ci_lower,ci_upper\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.label,
            format_float(row.estimate),
            format_float(row.se),
            format_float(row.p_value),
            format_float(row.ci_lower),
            format_float(row.ci_upper),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Matrix as CSV (used for the optional inverse-information export).
pub fn write_matrix_csv(path: &Path, digest: &str, m: &coxdebias_core::linalg::Mat) -> CliResult<()> {
    let mut out = csv_header(digest);
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format_float(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
