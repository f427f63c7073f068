//! Timing harness for the inverse-information construction: wall time and
//! active-set size per row solve across a grid of dimensions and
//! constraint widths, averaged over repetitions.

use std::time::Instant;

use coxdebias_core::data::risk_index;
use coxdebias_core::kernel;
use coxdebias_core::lasso;
use coxdebias_core::sim::{beta0_spaced, generate_dataset, Censoring, CovStructure, SimConfig};
use coxdebias_core::theta::ThetaSolver;

use crate::{classify_core_error, CliResult};

/// One row solve measurement.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchRowRecord {
    pub p: usize,
    pub gamma_multiplier: f64,
    pub gamma: f64,
    pub repetition: usize,
    pub row: usize,
    pub seconds: f64,
    pub active_set_size: usize,
    pub changes: usize,
}

/// Aggregated means per (p, gamma) cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchSummaryRecord {
    pub p: usize,
    pub gamma_multiplier: f64,
    pub gamma: f64,
    pub mean_seconds_total: f64,
    pub mean_seconds_per_row: f64,
    pub mean_active_set_size: f64,
    pub repetitions: usize,
}

/// Times the full inverse-information construction across `p_grid` x
/// `gamma_multipliers` (multipliers of `sqrt(log(p)/n)`), `reps` datasets
/// per cell.
pub fn bench_theta(
    p_grid: &[usize],
    gamma_multipliers: &[f64],
    reps: usize,
    n: usize,
    seed: u64,
) -> CliResult<(Vec<BenchSummaryRecord>, Vec<BenchRowRecord>)> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &p in p_grid {
        for &mult in gamma_multipliers {
            let gamma = mult * (f64::ln(p as f64) / n as f64).sqrt();
            let mut total_secs = 0.0;
            let mut total_active = 0usize;
            let mut row_solves = 0usize;
            for rep in 0..reps {
                let cfg = SimConfig {
                    n,
                    p,
                    beta0: beta0_spaced(p, 1.0),
                    cov: CovStructure::Ar1 { rho: 0.5 },
                    truncation: Some(2.5),
                    censoring: Censoring::Uniform {
                        low: 1.0,
                        high: 20.0,
                    },
                    seed: seed
                        .wrapping_add(rep as u64)
                        .wrapping_add((p as u64) << 32),
                };
                let ds = generate_dataset(&cfg);
                let index = risk_index(&ds);
                // cheap fixed-penalty fit; the timing target is the row QPs
                let lambda = (f64::ln(p as f64) / n as f64).sqrt();
                let fit = lasso::fit_lasso(&ds, &index, lambda, &[], 1e-7, 200)
                    .map_err(classify_core_error)?;
                let sigma =
                    kernel::sigma_hat(&ds, &index, &fit.beta).map_err(classify_core_error)?;
                let solver = ThetaSolver::new(&sigma, 1e-9).map_err(classify_core_error)?;
                for j in 0..p {
                    let start = Instant::now();
                    let (_, diag) = solver.solve_row(j, gamma).map_err(classify_core_error)?;
                    let secs = start.elapsed().as_secs_f64();
                    total_secs += secs;
                    total_active += diag.active_set_size;
                    row_solves += 1;
                    rows.push(BenchRowRecord {
                        p,
                        gamma_multiplier: mult,
                        gamma,
                        repetition: rep,
                        row: j,
                        seconds: secs,
                        active_set_size: diag.active_set_size,
                        changes: diag.changes,
                    });
                }
            }
            summaries.push(BenchSummaryRecord {
                p,
                gamma_multiplier: mult,
                gamma,
                mean_seconds_total: total_secs / reps as f64,
                mean_seconds_per_row: total_secs / row_solves as f64,
                mean_active_set_size: total_active as f64 / row_solves as f64,
                repetitions: reps,
            });
        }
    }
    Ok((summaries, rows))
}

pub fn summary_csv(digest: &str, summaries: &[BenchSummaryRecord]) -> String {
    let mut out = crate::output::csv_header(digest);
    out.push_str(
        "p,gamma_multiplier,gamma,mean_seconds_total,mean_seconds_per_row,mean_active_set_size,repetitions\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.p,
            crate::csvio::format_float(s.gamma_multiplier),
            crate::csvio::format_float(s.gamma),
            crate::csvio::format_float(s.mean_seconds_total),
            crate::csvio::format_float(s.mean_seconds_per_row),
            crate::csvio::format_float(s.mean_active_set_size),
            s.repetitions,
        ));
    }
    out
}

pub fn rows_csv(digest: &str, rows: &[BenchRowRecord]) -> String {
    let mut out = crate::output::csv_header(digest);
    out.push_str("p,gamma_multiplier,gamma,repetition,row,seconds,active_set_size,changes\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.p,
            crate::csvio::format_float(r.gamma_multiplier),
            crate::csvio::format_float(r.gamma),
            r.repetition,
            r.row,
            crate::csvio::format_float(r.seconds),
            r.active_set_size,
            r.changes,
        ));
    }
    out
}
