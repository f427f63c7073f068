//! Right-censored survival data: validation, standardization and the sorted
//! risk-set index used by every partial-likelihood computation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;
use crate::{Error, Result};

/// Observed triples `(Y_i, delta_i, X_i)` for `n` subjects and `p`
/// covariates.
///
/// Construction through [`SurvivalDataset::new`] enforces the invariants
/// (finite entries, `delta` in {0,1}, `n >= 2`, at least one event);
/// [`SurvivalDataset::from_parts_unchecked`] skips them for internal fold
/// slicing where degenerate subsets are legal.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    status: Vec<u8>,
    covariates: Mat,
}

impl SurvivalDataset {
    pub fn new(times: Vec<f64>, status: Vec<f64>, covariates: Mat) -> Result<Self> {
        let report = validate_parts(&times, &status, &covariates);
        if !report.is_empty() {
            return Err(Error::Validation(report));
        }
        let status = status.iter().map(|&s| s as u8).collect();
        Ok(SurvivalDataset {
            times,
            status,
            covariates,
        })
    }

    /// Builds a dataset without running validation.
    pub fn from_parts_unchecked(times: Vec<f64>, status: Vec<u8>, covariates: Mat) -> Self {
        SurvivalDataset {
            times,
            status,
            covariates,
        }
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn status(&self) -> &[u8] {
        &self.status
    }

    pub fn covariates(&self) -> &Mat {
        &self.covariates
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn event_count(&self) -> usize {
        self.status.iter().filter(|&&d| d == 1).count()
    }

    /// Returns the subset of rows in the given order. Invariants are not
    /// re-checked; callers that need a valid dataset must re-validate.
    pub fn select_rows(&self, rows: &[usize]) -> SurvivalDataset {
        let p = self.p();
        let mut times = Vec::with_capacity(rows.len());
        let mut status = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            times.push(self.times[r]);
            status.push(self.status[r]);
            data.extend_from_slice(self.covariates.row(r));
        }
        SurvivalDataset {
            times,
            status,
            covariates: Mat::from_vec(rows.len(), p, data),
        }
    }
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum ValidationIssue {
    NegativeTime { row: usize },
    NonFiniteTime { row: usize },
    InvalidStatus { row: usize, value: f64 },
    NonFiniteCovariate { row: usize, col: usize },
    NoEvents,
    TooFewSubjects { n: usize },
    RaggedRow { row: usize },
}

/// Report-style validation outcome; empty iff the data satisfy every
/// dataset invariant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl core::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} issue(s)", self.issues.len())?;
        for issue in self.issues.iter().take(4) {
            write!(f, "; {issue:?}")?;
        }
        if self.issues.len() > 4 {
            write!(f, "; ...")?;
        }
        Ok(())
    }
}

/// Validates raw columns before a dataset is constructed.
pub fn validate_parts(times: &[f64], status: &[f64], covariates: &Mat) -> ValidationReport {
    let mut issues = Vec::new();
    let n = times.len();
    if n < 2 {
        issues.push(ValidationIssue::TooFewSubjects { n });
    }
    if status.len() != n || covariates.nrows() != n {
        issues.push(ValidationIssue::RaggedRow {
            row: status.len().min(covariates.nrows()),
        });
        return ValidationReport { issues };
    }
    for (row, &t) in times.iter().enumerate() {
        if !t.is_finite() {
            issues.push(ValidationIssue::NonFiniteTime { row });
        } else if t < 0.0 {
            issues.push(ValidationIssue::NegativeTime { row });
        }
    }
    let mut any_event = false;
    for (row, &s) in status.iter().enumerate() {
        if s == 1.0 {
            any_event = true;
        } else if s != 0.0 {
            issues.push(ValidationIssue::InvalidStatus { row, value: s });
        }
    }
    if !any_event {
        issues.push(ValidationIssue::NoEvents);
    }
    for row in 0..covariates.nrows() {
        for (col, &v) in covariates.row(row).iter().enumerate() {
            if !v.is_finite() {
                issues.push(ValidationIssue::NonFiniteCovariate { row, col });
            }
        }
    }
    ValidationReport { issues }
}

/// Re-checks the invariants of an already-built dataset.
pub fn validate(ds: &SurvivalDataset) -> ValidationReport {
    let status: Vec<f64> = ds.status.iter().map(|&s| s as f64).collect();
    validate_parts(&ds.times, &status, &ds.covariates)
}

/// Covariate standardization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeMode {
    None,
    Center,
    Zscore,
}

/// Centers and scales sufficient to map coefficients and standard errors
/// back to the original covariate scale (divide both by the column scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ScalingInfo {
    pub fn identity(p: usize) -> Self {
        ScalingInfo {
            centers: vec![0.0; p],
            scales: vec![1.0; p],
        }
    }

    /// Maps a coefficient-scale quantity (estimate, SE, CI endpoint) on
    /// column `j` back to the original covariate scale.
    pub fn to_original_scale(&self, j: usize, value: f64) -> f64 {
        value / self.scales[j]
    }
}

/// Returns a transformed copy of the dataset plus the applied scaling.
///
/// `Zscore` uses the sample standard deviation (n - 1 denominator) and
/// fails with [`Error::ConstantColumn`] on any constant column.
pub fn standardize(
    ds: &SurvivalDataset,
    mode: StandardizeMode,
) -> Result<(SurvivalDataset, ScalingInfo)> {
    let (n, p) = (ds.n(), ds.p());
    if mode == StandardizeMode::None {
        return Ok((ds.clone(), ScalingInfo::identity(p)));
    }
    let mut centers = vec![0.0; p];
    for i in 0..n {
        for (j, &v) in ds.covariate_row(i).iter().enumerate() {
            centers[j] += v;
        }
    }
    for c in &mut centers {
        *c /= n as f64;
    }
    let mut scales = vec![1.0; p];
    if mode == StandardizeMode::Zscore {
        let mut ss = vec![0.0; p];
        for i in 0..n {
            for (j, &v) in ds.covariate_row(i).iter().enumerate() {
                let d = v - centers[j];
                ss[j] += d * d;
            }
        }
        for (j, &s) in ss.iter().enumerate() {
            let sd = libm::sqrt(s / (n as f64 - 1.0));
            if !(sd > 0.0) {
                return Err(Error::ConstantColumn { col: j });
            }
            scales[j] = sd;
        }
    }
    let mut out = ds.covariates.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        for j in 0..p {
            row[j] = (row[j] - centers[j]) / scales[j];
        }
    }
    let transformed = SurvivalDataset {
        times: ds.times.clone(),
        status: ds.status.clone(),
        covariates: out,
    };
    Ok((transformed, ScalingInfo { centers, scales }))
}

/// Sort order and tie structure over the observed times.
///
/// Risk sets are suffixes of the sorted order: the risk set at the time of
/// sorted position `s` is every position at or after the start of the tie
/// group containing `s` (Breslow convention: tied events share one risk
/// set). Ties are grouped by exact `f64` equality.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskIndex {
    /// Subject indices sorted by time ascending (ties by original index).
    order: Vec<usize>,
    /// Sorted positions holding events.
    event_positions: Vec<usize>,
    /// Tie groups as `(start, len)` ranges over sorted positions.
    tie_groups: Vec<(usize, usize)>,
    /// For each sorted position, the start of its tie group.
    group_start: Vec<usize>,
}

impl RiskIndex {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn event_positions(&self) -> &[usize] {
        &self.event_positions
    }

    pub fn tie_groups(&self) -> &[(usize, usize)] {
        &self.tie_groups
    }

    /// Start of the tie group for a sorted position.
    pub fn group_start(&self, sorted_pos: usize) -> usize {
        self.group_start[sorted_pos]
    }

    /// Size of the risk set at the time of the given sorted position.
    pub fn risk_set_size(&self, sorted_pos: usize) -> usize {
        self.order.len() - self.group_start[sorted_pos]
    }
}

/// Builds the sorted risk-set index for a dataset.
pub fn risk_index(ds: &SurvivalDataset) -> RiskIndex {
    let n = ds.n();
    let times = ds.times();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        times[a]
            .partial_cmp(&times[b])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut tie_groups = Vec::new();
    let mut group_start = vec![0; n];
    let mut start = 0;
    for s in 1..=n {
        if s == n || times[order[s]] != times[order[start]] {
            tie_groups.push((start, s - start));
            for g in start..s {
                group_start[g] = start;
            }
            start = s;
        }
    }
    let event_positions: Vec<usize> = (0..n).filter(|&s| ds.status()[order[s]] == 1).collect();
    RiskIndex {
        order,
        event_positions,
        tie_groups,
        group_start,
    }
}

/// Turns labels like column names into a stable, deterministic order.
/// (Used by the IO layer; kept here so the core owns the convention.)
pub fn default_covariate_labels(p: usize) -> Vec<String> {
    (1..=p).map(|j| alloc::format!("x{j}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(times: &[f64], status: &[f64], x: &[&[f64]]) -> SurvivalDataset {
        SurvivalDataset::new(times.to_vec(), status.to_vec(), Mat::from_rows(x)).unwrap()
    }

    #[test]
    fn valid_two_subject_dataset_has_empty_report() {
        let d = ds(&[1.0, 2.0], &[1.0, 0.0], &[&[0.5], &[-0.5]]);
        assert!(validate(&d).is_empty());
    }

    #[test]
    fn negative_time_is_flagged_with_row() {
        let x = Mat::from_rows(&[&[0.0], &[0.0]]);
        let report = validate_parts(&[-1.0, 2.0], &[1.0, 0.0], &x);
        assert!(report
            .issues
            .contains(&ValidationIssue::NegativeTime { row: 0 }));
    }

    #[test]
    fn all_censored_is_flagged() {
        let x = Mat::from_rows(&[&[0.0], &[0.0]]);
        let report = validate_parts(&[1.0, 2.0], &[0.0, 0.0], &x);
        assert!(report.issues.contains(&ValidationIssue::NoEvents));
    }

    #[test]
    fn status_two_is_rejected() {
        let x = Mat::from_rows(&[&[0.0], &[0.0]]);
        let report = validate_parts(&[1.0, 2.0], &[1.0, 2.0], &x);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::InvalidStatus { row: 1, .. })));
    }

    #[test]
    fn standardize_none_is_identity() {
        let d = ds(&[1.0, 2.0], &[1.0, 0.0], &[&[0.5], &[-0.5]]);
        let (out, info) = standardize(&d, StandardizeMode::None).unwrap();
        assert_eq!(out.covariates(), d.covariates());
        assert_eq!(info, ScalingInfo::identity(1));
    }

    #[test]
    fn zscore_gives_mean_zero_unit_sample_sd() {
        let d = ds(&[1.0, 2.0], &[1.0, 0.0], &[&[0.0], &[2.0]]);
        let (out, info) = standardize(&d, StandardizeMode::Zscore).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((out.covariates()[(0, 0)] + s).abs() < 1e-15);
        assert!((out.covariates()[(1, 0)] - s).abs() < 1e-15);
        assert!((info.centers[0] - 1.0).abs() < 1e-15);
        assert!((info.scales[0] - core::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zscore_rejects_constant_column() {
        let d = ds(&[1.0, 2.0], &[1.0, 0.0], &[&[3.0], &[3.0]]);
        assert_eq!(
            standardize(&d, StandardizeMode::Zscore).unwrap_err(),
            Error::ConstantColumn { col: 0 }
        );
    }

    #[test]
    fn risk_index_sorts_and_groups_ties() {
        let d = ds(
            &[3.0, 1.0, 2.0],
            &[1.0, 1.0, 0.0],
            &[&[0.0], &[0.0], &[0.0]],
        );
        let idx = risk_index(&d);
        assert_eq!(idx.order(), &[1, 2, 0]);

        let tied = ds(
            &[1.0, 1.0, 2.0],
            &[1.0, 1.0, 0.0],
            &[&[0.0], &[0.0], &[0.0]],
        );
        let idx = risk_index(&tied);
        assert_eq!(idx.tie_groups()[0], (0, 2));
        assert_eq!(idx.risk_set_size(0), 3);
        assert_eq!(idx.risk_set_size(1), 3);
        assert_eq!(idx.event_positions(), &[0, 1]);
    }

    #[test]
    fn no_events_has_empty_event_positions() {
        let d = SurvivalDataset::from_parts_unchecked(
            vec![1.0, 2.0, 3.0],
            vec![0, 0, 0],
            Mat::from_rows(&[&[0.0], &[0.0], &[0.0]]),
        );
        let idx = risk_index(&d);
        assert!(idx.event_positions().is_empty());
    }
}
