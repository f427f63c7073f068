//! Debiased estimates and the inferential layer built on them:
//! per-coordinate summaries, confidence intervals and Wald tests for linear
//! combinations, and chi-square tests with confidence regions for multiple
//! combinations.
//!
//! Variances use the quadratic form `c^T Theta c` with the unsymmetrized
//! row-wise estimate, exactly as the asymptotic result is stated; a
//! diagnostic flag reports loadings where the transposed form disagrees by
//! more than 0.1%. Rejection uses strict inequality, so a point on the
//! interval boundary is covered and not rejected.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, solve_small, sym_eigenvalue_range, Mat};
use crate::stats;
use crate::theta::ThetaHat;
use crate::{Error, Result};

/// Relative asymmetry of `c^T Theta c` beyond which results carry a
/// warning flag.
const ASYMMETRY_WARN: f64 = 1e-3;

/// One-step bias correction: `b = beta_hat - Theta * grad`.
pub fn debias(beta_hat: &[f64], theta: &ThetaHat, grad: &[f64]) -> Result<Vec<f64>> {
    let p = beta_hat.len();
    if theta.p() != p || grad.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: theta.p().max(grad.len()),
        });
    }
    let correction = theta.matrix.matvec(grad);
    Ok(beta_hat
        .iter()
        .zip(&correction)
        .map(|(b, c)| b - c)
        .collect())
}

/// Per-coordinate inference record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCoordinate {
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Debiased estimates with coordinate-wise standard errors, p-values and
/// confidence intervals at level `alpha`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasedInference {
    pub b: Vec<f64>,
    pub n: usize,
    pub alpha: f64,
    pub per_coord: Vec<PerCoordinate>,
}

/// Builds the coordinate-wise summary from a debiased vector.
pub fn infer_coordinates(
    b: &[f64],
    theta: &ThetaHat,
    n: usize,
    alpha: f64,
) -> Result<DebiasedInference> {
    let p = b.len();
    if theta.p() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: theta.p(),
        });
    }
    let z = stats::normal_upper_quantile(alpha / 2.0);
    let sqrt_n = libm::sqrt(n as f64);
    let mut per_coord = Vec::with_capacity(p);
    for j in 0..p {
        let d = theta.diag(j);
        if !(d > 0.0) {
            return Err(Error::NonPositiveVariance { value: d });
        }
        let se = libm::sqrt(d / n as f64);
        let t = sqrt_n * b[j] / libm::sqrt(d);
        let p_value = (2.0 * stats::normal_sf(t.abs())).min(1.0);
        per_coord.push(PerCoordinate {
            estimate: b[j],
            se,
            p_value,
            ci_lower: b[j] - z * se,
            ci_upper: b[j] + z * se,
        });
    }
    Ok(DebiasedInference {
        b: b.to_vec(),
        n,
        alpha,
        per_coord,
    })
}

/// Confidence interval for one linear combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Set when the unsymmetrized quadratic form is materially asymmetric
    /// for this loading.
    pub asymmetry_warning: bool,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Two-sided level-`alpha` confidence interval for `c^T beta`.
pub fn ci_linear(b: &[f64], theta: &ThetaHat, n: usize, c: &[f64], alpha: f64) -> Result<Interval> {
    let v = combination_variance(theta, c, b.len())?;
    let center = dot(c, b);
    let z = stats::normal_upper_quantile(alpha / 2.0);
    let half = z * libm::sqrt(v / n as f64);
    Ok(Interval {
        lower: center - half,
        upper: center + half,
        asymmetry_warning: theta.quadratic_form_asymmetry(c) > ASYMMETRY_WARN,
    })
}

/// Wald test of `H0: c^T beta = a0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearTest {
    pub c: Vec<f64>,
    pub a0: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub ci: Interval,
}

pub fn wald_test(
    b: &[f64],
    theta: &ThetaHat,
    n: usize,
    c: &[f64],
    a0: f64,
    alpha: f64,
) -> Result<LinearTest> {
    let v = combination_variance(theta, c, b.len())?;
    let statistic = libm::sqrt(n as f64) * (dot(c, b) - a0) / libm::sqrt(v);
    let p_value = (2.0 * stats::normal_sf(statistic.abs())).min(1.0);
    let z = stats::normal_upper_quantile(alpha / 2.0);
    let ci = ci_linear(b, theta, n, c, alpha)?;
    Ok(LinearTest {
        c: c.to_vec(),
        a0,
        statistic,
        p_value,
        reject: statistic.abs() > z,
        alpha,
        ci,
    })
}

fn combination_variance(theta: &ThetaHat, c: &[f64], p: usize) -> Result<f64> {
    if c.len() != p || theta.p() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: c.len(),
        });
    }
    let v = theta.quadratic_form(c);
    if !(v > 0.0) {
        return Err(Error::NonPositiveVariance { value: v });
    }
    Ok(v)
}

/// Chi-square test of `H0: A beta = a0` for a full-row-rank loading matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiTest {
    pub a0: Vec<f64>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    /// `A b`, kept for confidence-region membership checks.
    ab: Vec<f64>,
    /// `A Theta A^T` (unsymmetrized), kept for membership checks.
    f_hat: Vec<f64>,
}

impl MultiTest {
    /// Confidence-region membership at the test's level: whether `a` lies
    /// inside `{a : n (Ab - a)' F^{-1} (Ab - a) <= chi2_{l,alpha}}`.
    pub fn region_contains(&self, a: &[f64], n: usize) -> Result<bool> {
        let l = self.df;
        if a.len() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                got: a.len(),
            });
        }
        let f = Mat::from_vec(l, l, self.f_hat.clone());
        let diff: Vec<f64> = self.ab.iter().zip(a).map(|(x, y)| x - y).collect();
        let y = solve_small(&f, &diff).ok_or(Error::NonPdF)?;
        let stat = n as f64 * dot(&diff, &y);
        Ok(stat <= stats::chisq_upper_quantile(l, self.alpha))
    }
}

pub fn chisq_test(
    b: &[f64],
    theta: &ThetaHat,
    n: usize,
    a: &Mat,
    a0: &[f64],
    alpha: f64,
) -> Result<MultiTest> {
    let p = b.len();
    let l = a.nrows();
    if a.ncols() != p || a0.len() != l || theta.p() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: a.ncols(),
        });
    }
    // full row rank check through the Gram matrix of the loadings
    let mut gram = Mat::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            gram[(i, j)] = dot(a.row(i), a.row(j));
        }
    }
    let (gram_min, gram_max) = sym_eigenvalue_range(&gram, 40);
    if !(gram_min > 1e-12 * gram_max.max(1e-300)) {
        return Err(Error::RankDeficientA);
    }
    // F = A Theta A^T with the unsymmetrized inverse estimate
    let theta_at = a.matmul(&theta.matrix);
    let mut f_hat = Mat::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            f_hat[(i, j)] = dot(theta_at.row(i), a.row(j));
        }
    }
    // positive-definiteness check on the symmetrized form
    let mut sym = f_hat.clone();
    for i in 0..l {
        for j in 0..l {
            sym[(i, j)] = 0.5 * (f_hat[(i, j)] + f_hat[(j, i)]);
        }
    }
    let (min_eig, _) = sym_eigenvalue_range(&sym, 40);
    if !(min_eig > 1e-12 * f_hat.max_abs()) {
        return Err(Error::NonPdF);
    }
    let ab = a.matvec(b);
    let diff: Vec<f64> = ab.iter().zip(a0).map(|(x, y)| x - y).collect();
    let y = solve_small(&f_hat, &diff).ok_or(Error::NonPdF)?;
    let statistic = n as f64 * dot(&diff, &y);
    let p_value = stats::chisq_sf(statistic, l);
    let cutoff = stats::chisq_upper_quantile(l, alpha);
    Ok(MultiTest {
        a0: a0.to_vec(),
        statistic,
        df: l,
        p_value,
        reject: statistic > cutoff,
        alpha,
        ab,
        f_hat: f_hat.data().to_vec(),
    })
}

/// One row of the coefficient table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Ordered coefficient table; `sorted_by_p_value` is a stable permutation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub rows: Vec<CoefficientRow>,
    pub alpha: f64,
    pub n: usize,
}

impl CoefficientTable {
    pub fn sorted_by_p_value(&self) -> Vec<CoefficientRow> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            a.p_value
                .partial_cmp(&b.p_value)
                .unwrap_or(core::cmp::Ordering::Equal)
        });
        rows
    }
}

/// Renders the per-coordinate inference as a labeled table.
pub fn report_table(inference: &DebiasedInference, labels: &[String]) -> Result<CoefficientTable> {
    if labels.len() != inference.per_coord.len() {
        return Err(Error::DimensionMismatch {
            expected: inference.per_coord.len(),
            got: labels.len(),
        });
    }
    let rows = labels
        .iter()
        .zip(&inference.per_coord)
        .map(|(label, pc)| CoefficientRow {
            label: label.clone(),
            estimate: pc.estimate,
            se: pc.se,
            p_value: pc.p_value,
            ci_lower: pc.ci_lower,
            ci_upper: pc.ci_upper,
        })
        .collect();
    Ok(CoefficientTable {
        rows,
        alpha: inference.alpha,
        n: inference.n,
    })
}

/// Affine identity used by diagnostics: splitting the gradient splits the
/// correction.
pub fn debias_split_identity(
    beta_hat: &[f64],
    theta: &ThetaHat,
    g1: &[f64],
    g2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut combined = g1.to_vec();
    axpy(1.0, g2, &mut combined);
    let lhs = debias(beta_hat, theta, &combined)?;
    let mut rhs = debias(beta_hat, theta, g1)?;
    let corr2 = theta.matrix.matvec(g2);
    for (r, c) in rhs.iter_mut().zip(&corr2) {
        *r -= c;
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SigmaHat;
    use crate::theta::estimate_theta;

    fn theta_identity(p: usize) -> ThetaHat {
        estimate_theta(
            &SigmaHat {
                matrix: Mat::identity(p),
                at_beta: vec![0.0; p],
            },
            0.0,
            1e-10,
        )
        .unwrap()
    }

    #[test]
    fn debias_identity_theta() {
        let theta = theta_identity(2);
        let b = debias(&[0.5, 0.0], &theta, &[-0.1, 0.02]).unwrap();
        assert!((b[0] - 0.6).abs() < 1e-15);
        assert!((b[1] + 0.02).abs() < 1e-15);
        // zero gradient leaves the estimate unchanged
        let b0 = debias(&[0.5, 0.0], &theta, &[0.0, 0.0]).unwrap();
        assert_eq!(b0, vec![0.5, 0.0]);
    }

    #[test]
    fn debias_scaled_theta() {
        let mut theta = theta_identity(1);
        theta.matrix = Mat::diag(&[2.0]);
        let b = debias(&[0.0], &theta, &[0.25]).unwrap();
        assert!((b[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn ci_linear_hand_arithmetic() {
        // c'b = 0.6, c'Theta c = 2, n = 100, alpha = 0.05
        let mut theta = theta_identity(1);
        theta.matrix = Mat::diag(&[2.0]);
        let ci = ci_linear(&[0.6], &theta, 100, &[1.0], 0.05).unwrap();
        let half = 1.9599639845400545 * libm::sqrt(2.0 / 100.0);
        assert!((ci.lower - (0.6 - half)).abs() < 1e-12);
        assert!((ci.upper - (0.6 + half)).abs() < 1e-12);
        assert!((ci.lower - 0.32282).abs() < 1e-4);
        assert!((ci.upper - 0.87718).abs() < 1e-4);
    }

    #[test]
    fn alpha_one_degenerates_to_point() {
        let theta = theta_identity(1);
        let ci = ci_linear(&[0.6], &theta, 100, &[1.0], 1.0).unwrap();
        assert!((ci.lower - 0.6).abs() < 1e-12);
        assert!((ci.upper - 0.6).abs() < 1e-12);
    }

    #[test]
    fn coordinate_ci_matches_linear_ci_with_unit_loading() {
        let mut theta = theta_identity(2);
        theta.matrix = Mat::from_vec(2, 2, vec![1.5, 0.2, 0.2, 0.8]);
        let b = [0.3, -0.1];
        let inf = infer_coordinates(&b, &theta, 200, 0.05).unwrap();
        for j in 0..2 {
            let c: Vec<f64> = (0..2).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            let ci = ci_linear(&b, &theta, 200, &c, 0.05).unwrap();
            assert!((ci.lower - inf.per_coord[j].ci_lower).abs() < 1e-15);
            assert!((ci.upper - inf.per_coord[j].ci_upper).abs() < 1e-15);
        }
    }

    #[test]
    fn wald_null_point_and_boundary() {
        let theta = theta_identity(1);
        let t = wald_test(&[0.6], &theta, 100, &[1.0], 0.6, 0.05).unwrap();
        assert!(t.statistic.abs() < 1e-12);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        assert!(!t.reject);
        // exact boundary: strict inequality means no rejection
        let z = 1.9599639845400545;
        let a0 = 0.6 - z / 10.0; // sqrt(n (c'b - a0)^2) = z exactly
        let t = wald_test(&[0.6], &theta, 100, &[1.0], a0, 0.05).unwrap();
        assert!((t.statistic - z).abs() < 1e-12);
        assert!(!t.reject);
    }

    #[test]
    fn test_ci_duality() {
        let mut theta = theta_identity(3);
        theta.matrix = Mat::from_vec(3, 3, vec![1.2, 0.1, 0.0, 0.1, 0.9, 0.2, 0.0, 0.2, 1.1]);
        let b = [0.4, -0.2, 0.05];
        let c = [1.0, -1.0, 0.5];
        for &alpha in &[0.01, 0.05, 0.2, 0.5] {
            let ci = ci_linear(&b, &theta, 150, &c, alpha).unwrap();
            for &a0 in &[ci.lower - 0.01, ci.lower + 0.001, ci.center(), ci.upper + 0.01] {
                let t = wald_test(&b, &theta, 150, &c, a0, alpha).unwrap();
                assert_eq!(
                    !t.reject,
                    ci.contains(a0),
                    "duality broke at alpha={alpha}, a0={a0}"
                );
            }
        }
    }

    #[test]
    fn ci_width_increases_as_alpha_decreases() {
        let theta = theta_identity(1);
        let mut last = 0.0;
        for &alpha in &[0.5, 0.2, 0.1, 0.05, 0.01] {
            let ci = ci_linear(&[0.0], &theta, 50, &[1.0], alpha).unwrap();
            assert!(ci.width() > last);
            last = ci.width();
        }
    }

    #[test]
    fn chisq_null_point_is_zero() {
        let theta = theta_identity(2);
        let a = Mat::identity(2);
        let t = chisq_test(&[0.3, -0.4], &theta, 100, &a, &[0.3, -0.4], 0.05).unwrap();
        assert!(t.statistic.abs() < 1e-12);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        assert!(!t.reject);
        assert_eq!(t.df, 2);
    }

    #[test]
    fn chisq_one_df_equals_squared_wald() {
        let mut theta = theta_identity(3);
        theta.matrix = Mat::from_vec(3, 3, vec![1.2, 0.1, 0.0, 0.1, 0.9, 0.2, 0.0, 0.2, 1.1]);
        let b = [0.4, -0.2, 0.05];
        let c = [0.5, 1.0, -1.0];
        let wald = wald_test(&b, &theta, 120, &c, 0.1, 0.05).unwrap();
        let a = Mat::from_rows(&[&c]);
        let multi = chisq_test(&b, &theta, 120, &a, &[0.1], 0.05).unwrap();
        assert!(
            (multi.statistic - wald.statistic * wald.statistic).abs() < 1e-12,
            "{} vs {}",
            multi.statistic,
            wald.statistic * wald.statistic
        );
        assert!((multi.p_value - wald.p_value).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_loading_is_rejected() {
        let theta = theta_identity(3);
        let a = Mat::from_rows(&[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]);
        assert_eq!(
            chisq_test(&[0.0; 3], &theta, 50, &a, &[0.0, 0.0], 0.05).unwrap_err(),
            Error::RankDeficientA
        );
    }

    #[test]
    fn confidence_region_membership_matches_test() {
        let theta = theta_identity(2);
        let b = [0.5, -0.3];
        let a = Mat::identity(2);
        let t = chisq_test(&b, &theta, 80, &a, &[0.5, -0.3], 0.05).unwrap();
        assert!(t.region_contains(&[0.5, -0.3], 80).unwrap());
        assert!(!t.region_contains(&[5.0, 5.0], 80).unwrap());
    }

    #[test]
    fn debias_affine_in_gradient() {
        let mut theta = theta_identity(2);
        theta.matrix = Mat::from_vec(2, 2, vec![1.3, 0.4, 0.2, 0.9]);
        let (lhs, rhs) =
            debias_split_identity(&[0.2, -0.1], &theta, &[0.05, -0.02], &[0.01, 0.03]).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn report_table_sorts_stably_and_round_trips() {
        let theta = theta_identity(1);
        let inf = infer_coordinates(&[0.0], &theta, 50, 0.05).unwrap();
        assert!((inf.per_coord[0].p_value - 1.0).abs() < 1e-12);
        assert!(
            (inf.per_coord[0].ci_lower + inf.per_coord[0].ci_upper).abs() < 1e-12,
            "CI symmetric about 0"
        );
        let table = report_table(&inf, &[alloc::string::String::from("x1")]).unwrap();
        let sorted = table.sorted_by_p_value();
        assert_eq!(sorted.len(), 1);
        assert_eq!(sorted[0].label, "x1");
    }

    #[test]
    fn table_json_round_trip_is_exact() {
        let mut theta = theta_identity(2);
        theta.matrix = Mat::from_vec(2, 2, vec![1.3, 0.21, 0.21, 0.7]);
        let inf = infer_coordinates(&[0.123456789012345, -0.9876543210987], &theta, 173, 0.05)
            .unwrap();
        let table = report_table(
            &inf,
            &[
                alloc::string::String::from("a"),
                alloc::string::String::from("b"),
            ],
        )
        .unwrap();
        let json = serde_json::to_string(&table).unwrap();
        let back: CoefficientTable = serde_json::from_str(&json).unwrap();
        for (orig, rt) in table.rows.iter().zip(&back.rows) {
            assert_eq!(orig.estimate.to_bits(), rt.estimate.to_bits());
            assert_eq!(orig.se.to_bits(), rt.se.to_bits());
            assert_eq!(orig.p_value.to_bits(), rt.p_value.to_bits());
            assert_eq!(orig.ci_lower.to_bits(), rt.ci_lower.to_bits());
            assert_eq!(orig.ci_upper.to_bits(), rt.ci_upper.to_bits());
        }
    }
}
