//! Row-wise estimation of the inverse information matrix and the
//! hard-thresholded cross-validation that selects its tuning parameter.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{risk_index, SurvivalDataset};
use crate::kernel::{self, SigmaHat};
use crate::lasso::{argmin_first, partition_rows, seeded_folds};
use crate::linalg::{dot, norm_inf, Cholesky, Mat};
use crate::qp;
use crate::stats;
use crate::{Error, Result};

/// Minimum acceptable smallest-eigenvalue estimate before a ridge lift is
/// applied to the quadratic-form matrix.
const MIN_EIGENVALUE: f64 = 1e-10;

/// The p x p inverse-information estimate: row `j` solves the constrained
/// QP targeting the j-th unit vector. Rows are independent solutions and
/// the matrix is deliberately not symmetrized.
#[derive(Debug, Clone)]
pub struct ThetaHat {
    pub matrix: Mat,
    pub gamma: f64,
    /// Ridge lift added to the quadratic form (0 when none was needed).
    pub ridge: f64,
    /// Independently recomputed constraint residual per row:
    /// `||Sigma_lifted m_j - e_j||_inf`.
    pub row_kkt: Vec<f64>,
}

impl ThetaHat {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diag(&self, j: usize) -> f64 {
        self.matrix[(j, j)]
    }

    /// Quadratic form `c^T Theta c` with the unsymmetrized matrix.
    pub fn quadratic_form(&self, c: &[f64]) -> f64 {
        dot(c, &self.matrix.matvec(c))
    }

    /// Relative asymmetry of the quadratic form, used as a diagnostic for
    /// loadings where row-wise and column-wise application disagree.
    pub fn quadratic_form_asymmetry(&self, c: &[f64]) -> f64 {
        let forward = self.quadratic_form(c);
        let transposed = dot(c, &self.matrix.matvec_t(c));
        if forward == 0.0 {
            return 0.0;
        }
        ((forward - transposed) / forward).abs()
    }

    pub fn max_row_kkt(&self) -> f64 {
        self.row_kkt.iter().fold(0.0_f64, |m, &v| m.max(v))
    }
}

/// Shared state for solving the p row problems against one lifted
/// quadratic-form matrix: the Cholesky factor and the stacked constraint
/// normals are built once and reused across rows.
pub struct ThetaSolver {
    sigma: Mat,
    ridge: f64,
    qchol: Cholesky,
    constraints: Mat,
    tol: f64,
}

/// Diagnostics from one row solve.
#[derive(Debug, Clone, Copy)]
pub struct RowDiagnostics {
    /// `||Sigma_lifted m - e_j||_inf`, recomputed from the returned row.
    pub constraint_residual: f64,
    pub active_set_size: usize,
    pub changes: usize,
}

impl ThetaSolver {
    /// Prepares the solver, applying the ridge lift policy: if the
    /// Cholesky factorization fails or the smallest-eigenvalue estimate
    /// falls below 1e-10, `Sigma` is lifted by `1e-8 * trace(Sigma) / p`.
    pub fn new(sigma: &SigmaHat, tol: f64) -> Result<Self> {
        let p = sigma.matrix.nrows();
        let mut lifted = sigma.matrix.clone();
        let mut ridge = 0.0;
        let needs_lift = match Cholesky::factor(&lifted) {
            Some(ch) => ch.min_eigenvalue_estimate(30) < MIN_EIGENVALUE,
            None => true,
        };
        if needs_lift {
            ridge = 1e-8 * lifted.trace() / p as f64;
            lifted.add_to_diag(ridge);
        }
        // quadratic term 2*Sigma so the row objective is m' Sigma m
        let mut q = lifted.clone();
        q.scale(2.0);
        let qchol = Cholesky::factor(&q).ok_or(Error::NotPositiveDefinite)?;
        let mut constraints = Mat::zeros(2 * p, p);
        for i in 0..p {
            let row = lifted.row(i).to_vec();
            constraints.row_mut(i).copy_from_slice(&row);
            for (dst, v) in constraints.row_mut(p + i).iter_mut().zip(&row) {
                *dst = -v;
            }
        }
        Ok(ThetaSolver {
            sigma: lifted,
            ridge,
            qchol,
            constraints,
            tol,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn sigma_lifted(&self) -> &Mat {
        &self.sigma
    }

    /// Solves the row problem for unit vector `j` at the given `gamma`.
    pub fn solve_row(&self, j: usize, gamma: f64) -> Result<(Vec<f64>, RowDiagnostics)> {
        let p = self.p();
        let (x, active_set_size, changes) = if gamma == 0.0 {
            // equality-constrained: direct factorization solve
            let chol =
                Cholesky::factor(&self.sigma).ok_or(Error::NotPositiveDefinite.for_theta_row(j))?;
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            (chol.solve(&e), p, 0)
        } else if gamma >= 1.0 {
            // the zero vector is feasible and attains the minimum
            (vec![0.0; p], 0, 0)
        } else {
            let mut b = vec![0.0; 2 * p];
            for i in 0..p {
                let e = if i == j { 1.0 } else { 0.0 };
                b[i] = e - gamma;
                b[p + i] = -e - gamma;
            }
            let sol = qp::solve_with_factor(
                &self.qchol,
                &vec![0.0; p],
                &self.constraints,
                &b,
                self.tol,
                50 * p,
            )
            .map_err(|e| e.for_theta_row(j))?;
            (sol.x, sol.active_set.len(), sol.changes)
        };
        let mut resid = self.sigma.matvec(&x);
        resid[j] -= 1.0;
        let constraint_residual = norm_inf(&resid);
        Ok((
            x,
            RowDiagnostics {
                constraint_residual,
                active_set_size,
                changes,
            },
        ))
    }
}

/// Assembles the full inverse-information estimate at one `gamma`.
pub fn estimate_theta(sigma: &SigmaHat, gamma: f64, tol: f64) -> Result<ThetaHat> {
    assert!(gamma >= 0.0, "gamma must be nonnegative");
    let solver = ThetaSolver::new(sigma, tol)?;
    let p = solver.p();
    let mut matrix = Mat::zeros(p, p);
    let mut row_kkt = Vec::with_capacity(p);
    for j in 0..p {
        let (row, diag) = solver.solve_row(j, gamma)?;
        matrix.row_mut(j).copy_from_slice(&row);
        row_kkt.push(diag.constraint_residual);
    }
    Ok(ThetaHat {
        matrix,
        gamma,
        ridge: solver.ridge(),
        row_kkt,
    })
}

/// Which denominator standardizes the thresholding statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdDenominator {
    /// `sqrt(Theta_jj)`, the standard-error form implied by the asymptotic
    /// normality result.
    SqrtDiag,
    /// The literal diagonal `Theta_jj`.
    Diag,
}

/// Zeroes every coordinate whose standardized statistic falls below the
/// Bonferroni cutoff `z_{alpha/(2p)}`; coordinate `j` is kept unchanged iff
/// `sqrt(n) |b_j| / denom_j` exceeds that cutoff.
pub fn hard_threshold(
    b: &[f64],
    theta: &ThetaHat,
    n: usize,
    alpha: f64,
    denominator: ThresholdDenominator,
) -> Result<Vec<f64>> {
    let p = b.len();
    if theta.p() != p {
        return Err(Error::DimensionMismatch {
            expected: theta.p(),
            got: p,
        });
    }
    let cutoff = stats::normal_upper_quantile(alpha / (2.0 * p as f64));
    let sqrt_n = libm::sqrt(n as f64);
    let mut out = vec![0.0; p];
    for j in 0..p {
        let d = theta.diag(j);
        if !(d > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: j, value: d });
        }
        let denom = match denominator {
            ThresholdDenominator::SqrtDiag => libm::sqrt(d),
            ThresholdDenominator::Diag => d,
        };
        let stat = sqrt_n * b[j].abs() / denom;
        if stat > cutoff {
            out[j] = b[j];
        }
    }
    Ok(out)
}

/// Default candidate grid: multipliers of `sqrt(log(p)/n)` spanning the
/// plateau seen across the tuning experiments, dropped where the absolute
/// value would reach 1 (which collapses every row to zero).
pub fn default_gamma_grid(p: usize, n: usize) -> Vec<f64> {
    const MULTIPLIERS: [f64; 9] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0];
    let base = libm::sqrt(libm::log(p as f64) / n as f64);
    let grid: Vec<f64> = MULTIPLIERS
        .iter()
        .map(|m| m * base)
        .filter(|g| *g < 1.0)
        .collect();
    if grid.is_empty() {
        vec![0.05 * base]
    } else {
        grid
    }
}

/// Cross-validation curve over the gamma grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaCurve {
    pub grid: Vec<f64>,
    pub losses: Vec<f64>,
    #[serde(rename = "K")]
    pub fold_count: usize,
    pub alpha: f64,
    /// Index of the winner (ties go to the smaller gamma).
    pub chosen: usize,
    pub seed: u64,
}

/// Loss contributions of one cross-validation fold across the whole gamma
/// grid: fit on the training rows through `sigma_builder`, debias per
/// gamma, hard-threshold, and score the held-out negative log partial
/// likelihood (scaled by the held-out size).
pub fn cv_gamma_fold_losses<F>(
    ds: &SurvivalDataset,
    sigma_builder: &F,
    gamma_grid: &[f64],
    folds: &[usize],
    fold: usize,
    alpha: f64,
    denominator: ThresholdDenominator,
    tol: f64,
) -> Result<Vec<f64>>
where
    F: Fn(&SurvivalDataset) -> Result<(Vec<f64>, SigmaHat)>,
{
    let (train_rows, test_rows) = partition_rows(folds, fold);
    let train = ds.select_rows(&train_rows);
    if train.event_count() == 0 {
        return Err(Error::FoldWithoutEvents { fold });
    }
    let test = ds.select_rows(&test_rows);
    let test_index = risk_index(&test);
    let train_index = risk_index(&train);
    let (beta_train, sigma_train) = sigma_builder(&train)?;
    let grad_train = kernel::score(&train, &train_index, &beta_train)?;
    let solver = ThetaSolver::new(&sigma_train, tol)?;
    let p = solver.p();
    let mut losses = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        let mut theta_matrix = Mat::zeros(p, p);
        let mut row_kkt = Vec::with_capacity(p);
        for j in 0..p {
            let (row, diag) = solver.solve_row(j, gamma)?;
            theta_matrix.row_mut(j).copy_from_slice(&row);
            row_kkt.push(diag.constraint_residual);
        }
        let theta = ThetaHat {
            matrix: theta_matrix,
            gamma,
            ridge: solver.ridge(),
            row_kkt,
        };
        let debiased = crate::inference::debias(&beta_train, &theta, &grad_train)?;
        let thresholded =
            match hard_threshold(&debiased, &theta, train_rows.len(), alpha, denominator) {
                Ok(v) => v,
                // rows collapsed to zero by a large gamma: score the
                // zero vector rather than aborting the fold
                Err(Error::NonPositiveDiagonal { .. }) => vec![0.0; p],
                Err(e) => return Err(e),
            };
        let held_out = kernel::neg_log_partial_likelihood(&test, &test_index, &thresholded)?;
        losses.push(test_rows.len() as f64 * held_out);
    }
    Ok(losses)
}

/// Selects `gamma` by K-fold cross-validation of the held-out negative log
/// partial likelihood at hard-thresholded debiased estimates.
///
/// `sigma_builder` fits the penalized model on a training subset and
/// returns its coefficient vector together with the quadratic-form matrix;
/// per fold it runs once and its output is shared across the whole grid.
pub fn cv_gamma<F>(
    ds: &SurvivalDataset,
    sigma_builder: F,
    gamma_grid: &[f64],
    fold_count: usize,
    alpha: f64,
    seed: u64,
    denominator: ThresholdDenominator,
    tol: f64,
) -> Result<GammaCurve>
where
    F: Fn(&SurvivalDataset) -> Result<(Vec<f64>, SigmaHat)>,
{
    assert!(fold_count >= 2, "cross-validation needs at least two folds");
    assert!(!gamma_grid.is_empty(), "empty gamma grid");
    let folds = seeded_folds(ds.n(), fold_count, seed);
    let mut losses = vec![0.0; gamma_grid.len()];
    for k in 0..fold_count {
        let fold_losses = cv_gamma_fold_losses(
            ds,
            &sigma_builder,
            gamma_grid,
            &folds,
            k,
            alpha,
            denominator,
            tol,
        )?;
        for (total, l) in losses.iter_mut().zip(&fold_losses) {
            *total += l;
        }
    }
    let chosen = argmin_first(&losses);
    Ok(GammaCurve {
        grid: gamma_grid.to_vec(),
        losses,
        fold_count,
        alpha,
        chosen,
        seed,
    })
}
