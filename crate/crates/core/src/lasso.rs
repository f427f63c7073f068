//! L1-penalized Cox regression (outer quadratic approximation with
//! soft-thresholded coordinate descent), the unpenalized Newton fit, and
//! K-fold cross-validation over a penalty grid.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{risk_index, RiskIndex, SurvivalDataset};
use crate::kernel;
use crate::linalg::{dot, norm_inf, Cholesky};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Divergence bound for the Newton fit: once any coefficient passes this
/// magnitude the partial likelihood is treated as monotone (separation).
/// Under separation the gradient decays like exp(-c|beta|), so the bound
/// must sit below where a tolerance of ~1e-8 would spuriously report
/// convergence on the plateau.
const MPLE_DIVERGENCE_BOUND: f64 = 8.0;

/// Condition estimate beyond which the Newton Hessian counts as singular.
const MPLE_MAX_CONDITION: f64 = 1e12;

/// A fitted coefficient vector with its penalty, objective and convergence
/// record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Penalized objective: negative log partial likelihood plus
    /// `lambda * ||beta||_1`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tol: f64,
}

/// Cross-validation curve over a descending penalty grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvCurve {
    pub grid: Vec<f64>,
    pub losses: Vec<f64>,
    #[serde(rename = "K")]
    pub fold_count: usize,
    /// Index of the winning grid entry (ties go to the larger penalty).
    pub chosen: usize,
}

/// Held-out loss used by cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvLoss {
    /// Negative log partial likelihood evaluated on the held-out fold alone.
    HeldOut,
    /// Full-data minus training-data partial likelihood difference.
    VerweijVanHouwelingen,
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Max stationarity violation of the penalized objective at `beta`.
pub fn kkt_residual(score: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let mut worst = 0.0_f64;
    for (s, b) in score.iter().zip(beta) {
        let r = if *b > 0.0 {
            (s + lambda).abs()
        } else if *b < 0.0 {
            (s - lambda).abs()
        } else {
            (s.abs() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Fits the lasso-penalized Cox model at a fixed penalty level.
///
/// Each outer iteration builds the local quadratic approximation of the
/// partial likelihood, solves it by cyclic soft-thresholded coordinate
/// descent, and step-halves as needed so the penalized objective never
/// increases. Convergence is declared on the exact stationarity conditions.
/// Hitting `max_iter` returns the best iterate with `converged = false`.
pub fn fit_lasso(
    ds: &SurvivalDataset,
    index: &RiskIndex,
    lambda: f64,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CoxFit> {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let (n, p) = (ds.n(), ds.p());
    let mut beta = if init.is_empty() {
        vec![0.0; p]
    } else {
        init.to_vec()
    };
    if beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta.len(),
        });
    }
    let mut eta = kernel::linear_predictor(ds, &beta)?;
    let mut objective = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    let x = ds.covariates();
    // column-major copy keeps the coordinate loops on contiguous memory
    let mut xcols = vec![0.0; n * p];
    for k in 0..n {
        let row = x.row(k);
        for (j, &v) in row.iter().enumerate() {
            xcols[j * n + k] = v;
        }
    }
    let mut delta = vec![0.0; p];
    let mut r = vec![0.0; n];
    let mut curv_diag = vec![0.0; p];
    let mut weighted_r = vec![0.0; n];

    for outer in 0..max_iter {
        iterations = outer;
        let ws = kernel::working_set(ds, index, &eta)?;
        objective = ws.value + lambda * l1(&beta);
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        // exact score via the chain rule: X^T grad_eta
        let score = x.matvec_t(&ws.grad_eta);
        if kkt_residual(&score, &beta, lambda) <= tol {
            converged = true;
            break;
        }

        for (j, slot) in curv_diag.iter_mut().enumerate() {
            let col = &xcols[j * n..(j + 1) * n];
            let mut a = 0.0;
            for (h, xkj) in ws.curv_eta.iter().zip(col) {
                a += h * xkj * xkj;
            }
            *slot = a;
        }
        delta.iter_mut().for_each(|d| *d = 0.0);
        r.iter_mut().for_each(|v| *v = 0.0);
        weighted_r.iter_mut().for_each(|v| *v = 0.0);
        let mut r_is_zero = true;

        // Coordinate descent on the quadratic model; after the first full
        // sweep only the active coordinates are revisited until stable.
        // `weighted_r` carries curv_eta * (x' delta) so each coordinate
        // derivative is one contiguous dot product.
        let inner_stop = 0.25 * tol;
        let mut full_sweep = true;
        for _sweep in 0..200 {
            let mut max_viol = 0.0_f64;
            for j in 0..p {
                if !full_sweep && beta[j] + delta[j] == 0.0 {
                    continue;
                }
                let a = curv_diag[j];
                if a <= 1e-300 {
                    continue;
                }
                let col = &xcols[j * n..(j + 1) * n];
                let mut d = score[j];
                if !r_is_zero {
                    d += dot(col, &weighted_r);
                }
                let cur = beta[j] + delta[j];
                let cand = soft_threshold(cur - d / a, lambda / a);
                let change = cand - cur;
                if change != 0.0 {
                    for ((rk, wk), (xkj, h)) in r
                        .iter_mut()
                        .zip(weighted_r.iter_mut())
                        .zip(col.iter().zip(&ws.curv_eta))
                    {
                        *rk += xkj * change;
                        *wk = *h * *rk;
                    }
                    r_is_zero = false;
                    delta[j] += change;
                    max_viol = max_viol.max((a * change).abs());
                }
            }
            if max_viol <= inner_stop {
                if full_sweep {
                    break;
                }
                full_sweep = true;
            } else {
                full_sweep = false;
            }
        }

        // line search along the model direction: halve on increase, and
        // expand past 1 while the true objective keeps dropping (the
        // per-subject curvature overestimates the directional curvature,
        // so the unit model step is conservative)
        let objective_at = |step: f64| -> (f64, Vec<f64>, Vec<f64>) {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(b, d)| b + step * d)
                .collect();
            let cand_eta: Vec<f64> = eta.iter().zip(&r).map(|(e, ri)| e + step * ri).collect();
            let value = kernel::value_from_eta(ds, index, &cand_eta);
            (value + lambda * l1(&cand), cand, cand_eta)
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let (obj, cand, cand_eta) = objective_at(step);
            if obj.is_finite() && obj <= objective + 1e-12 * (1.0 + objective.abs()) {
                accepted = Some((obj, cand, cand_eta));
                break;
            }
            step *= 0.5;
        }
        let Some((mut best_obj, mut best_beta, mut best_eta)) = accepted else {
            break; // no further progress possible at this precision
        };
        if step == 1.0 {
            for expand in [2.0, 4.0, 8.0] {
                let (obj, cand, cand_eta) = objective_at(expand);
                if obj.is_finite() && obj < best_obj {
                    best_obj = obj;
                    best_beta = cand;
                    best_eta = cand_eta;
                } else {
                    break;
                }
            }
        }
        beta = best_beta;
        eta = best_eta;
        objective = best_obj;
    }

    if !converged {
        // a stalled line search can still sit at stationarity; re-check
        let score = kernel::score(ds, index, &beta)?;
        converged = kkt_residual(&score, &beta, lambda) <= tol;
    }
    Ok(CoxFit {
        beta,
        lambda,
        objective,
        iterations: iterations + 1,
        converged,
        tol,
    })
}

/// Unpenalized maximum partial likelihood fit by damped Newton iterations.
///
/// Fails with [`Error::SingularHessian`] when the curvature matrix cannot
/// be factored (or its condition estimate exceeds 1e12) and with
/// [`Error::MonotoneLikelihood`] when a coefficient diverges, which signals
/// separation.
pub fn fit_mple(
    ds: &SurvivalDataset,
    index: &RiskIndex,
    tol: f64,
    max_iter: usize,
) -> Result<CoxFit> {
    let p = ds.p();
    let events = ds.event_count();
    if p >= events {
        return Err(Error::SingularHessian {
            cond: f64::INFINITY,
        });
    }
    let mut beta = vec![0.0; p];
    let mut eval = kernel::kernel_eval(ds, index, &beta)?;
    let mut converged = false;
    let mut iterations = 0;
    for outer in 0..max_iter {
        iterations = outer;
        if norm_inf(&eval.gradient) <= tol {
            converged = true;
            break;
        }
        let chol = Cholesky::factor(&eval.hessian).ok_or(Error::SingularHessian {
            cond: f64::INFINITY,
        })?;
        let cond = chol.diag_condition();
        if cond > MPLE_MAX_CONDITION {
            return Err(Error::SingularHessian { cond });
        }
        let mut dir = eval.gradient.clone();
        chol.solve_in_place(&mut dir);
        // Newton direction: beta <- beta - H^{-1} g, with halving on the value
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b - step * d).collect();
            match kernel::kernel_eval(ds, index, &cand) {
                Ok(cand_eval) => {
                    if cand_eval.value.is_finite()
                        && cand_eval.value <= eval.value + 1e-12 * (1.0 + eval.value.abs())
                    {
                        beta = cand;
                        eval = cand_eval;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::NonFiniteLinearPredictor { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        if norm_inf(&beta) > MPLE_DIVERGENCE_BOUND {
            return Err(Error::MonotoneLikelihood {
                bound: MPLE_DIVERGENCE_BOUND,
            });
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        converged = norm_inf(&eval.gradient) <= tol;
    }
    Ok(CoxFit {
        beta,
        lambda: 0.0,
        objective: eval.value,
        iterations: iterations + 1,
        converged,
        tol,
    })
}

/// Log-spaced descending penalty grid from `lambda_max = ||score(0)||_inf`
/// down to `ratio * lambda_max`.
pub fn lambda_grid(
    ds: &SurvivalDataset,
    index: &RiskIndex,
    count: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    assert!(count >= 1, "grid needs at least one point");
    assert!(ratio > 0.0 && ratio < 1.0, "ratio must be in (0,1)");
    let score0 = kernel::score(ds, index, &vec![0.0; ds.p()])?;
    let lambda_max = norm_inf(&score0);
    if count == 1 {
        return Ok(vec![lambda_max]);
    }
    let log_max = libm::log(lambda_max);
    let log_min = libm::log(lambda_max * ratio);
    Ok((0..count)
        .map(|i| {
            let f = i as f64 / (count as f64 - 1.0);
            libm::exp(log_max + f * (log_min - log_max))
        })
        .collect())
}

/// Deterministic fold assignment by seeded permutation: returns a fold id
/// in `0..k` for every subject.
pub fn seeded_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut perm);
    let mut fold = vec![0; n];
    for (pos, &subject) in perm.iter().enumerate() {
        fold[subject] = pos % k;
    }
    fold
}

/// Splits subject indices into (training, held-out) row sets for fold `k`.
pub fn partition_rows(folds: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &f) in folds.iter().enumerate() {
        if f == k {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

/// Selects the penalty by K-fold cross-validation.
///
/// Folds come from a seeded permutation; per candidate the loss is the sum
/// over folds of `n_test * loss_fold` at the fold-trained fit, warm-started
/// along the descending grid. Ties go to the larger penalty.
pub fn cv_lambda(
    ds: &SurvivalDataset,
    grid: &[f64],
    fold_count: usize,
    seed: u64,
    loss: CvLoss,
    tol: f64,
    max_iter: usize,
) -> Result<CvCurve> {
    assert!(fold_count >= 2, "cross-validation needs at least two folds");
    assert!(!grid.is_empty(), "empty penalty grid");
    let n = ds.n();
    let folds = seeded_folds(n, fold_count, seed);
    let mut losses = vec![0.0; grid.len()];
    let full_index = risk_index(ds);
    for k in 0..fold_count {
        let (train_rows, test_rows) = partition_rows(&folds, k);
        let train = ds.select_rows(&train_rows);
        if train.event_count() == 0 {
            return Err(Error::FoldWithoutEvents { fold: k });
        }
        let train_index = risk_index(&train);
        let test = ds.select_rows(&test_rows);
        let test_index = risk_index(&test);
        let mut warm = vec![0.0; ds.p()];
        for (gi, &lambda) in grid.iter().enumerate() {
            let fit = fit_lasso(&train, &train_index, lambda, &warm, tol, max_iter)?;
            warm = fit.beta.clone();
            let contribution = match loss {
                CvLoss::HeldOut => {
                    let v = kernel::neg_log_partial_likelihood(&test, &test_index, &fit.beta)?;
                    test_rows.len() as f64 * v
                }
                CvLoss::VerweijVanHouwelingen => {
                    let full = kernel::neg_log_partial_likelihood(ds, &full_index, &fit.beta)?;
                    let tr =
                        kernel::neg_log_partial_likelihood(&train, &train_index, &fit.beta)?;
                    n as f64 * full - train_rows.len() as f64 * tr
                }
            };
            losses[gi] += contribution;
        }
    }
    let chosen = argmin_first(&losses);
    Ok(CvCurve {
        grid: grid.to_vec(),
        losses,
        fold_count,
        chosen,
    })
}

pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::risk_index;
    use crate::linalg::Mat;

    fn hand_dataset() -> (SurvivalDataset, RiskIndex) {
        let ds = SurvivalDataset::new(
            vec![1.0, 2.0, 3.0],
            vec![1.0, 1.0, 0.0],
            Mat::from_rows(&[&[1.0], &[0.0], &[-1.0]]),
        )
        .unwrap();
        let idx = risk_index(&ds);
        (ds, idx)
    }

    /// Three subjects with a discordant event order (the x = 0 subject
    /// fails first), so the partial likelihood has an interior minimum.
    fn discordant_dataset() -> (SurvivalDataset, RiskIndex) {
        let ds = SurvivalDataset::new(
            vec![1.0, 2.0, 3.0],
            vec![1.0, 1.0, 0.0],
            Mat::from_rows(&[&[0.0], &[1.0], &[-1.0]]),
        )
        .unwrap();
        let idx = risk_index(&ds);
        (ds, idx)
    }

    /// Closed-form score of the discordant dataset, independent of the
    /// kernel implementation.
    fn discordant_score(beta: f64) -> f64 {
        let (ep, em) = (libm::exp(beta), libm::exp(-beta));
        let eta1 = (ep - em) / (1.0 + ep + em);
        let eta2 = (ep - em) / (ep + em);
        -((0.0 - eta1) + (1.0 - eta2)) / 3.0
    }

    fn bisect_discordant_root() -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        assert!(discordant_score(lo) < 0.0 && discordant_score(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if discordant_score(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambda_at_or_above_max_gives_zero() {
        let (ds, idx) = hand_dataset();
        let fit = fit_lasso(&ds, &idx, 1.0, &[0.0], 1e-7, 200).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.beta, vec![0.0]);
        // lambda_max itself also pins zero (KKT boundary)
        let fit = fit_lasso(&ds, &idx, 0.5, &[0.0], 1e-7, 200).unwrap();
        assert_eq!(fit.beta, vec![0.0]);
    }

    #[test]
    fn unpenalized_fit_matches_bisection_root() {
        let (ds, idx) = discordant_dataset();
        let root = bisect_discordant_root();
        let lasso0 = fit_lasso(&ds, &idx, 0.0, &[0.0], 1e-9, 200).unwrap();
        assert!(lasso0.converged);
        assert!(
            (lasso0.beta[0] - root).abs() < 1e-6,
            "lasso0 = {}, root = {root}",
            lasso0.beta[0]
        );
        let mple = fit_mple(&ds, &idx, 1e-9, 100).unwrap();
        assert!(mple.converged);
        assert!((mple.beta[0] - root).abs() < 1e-8);
        assert!(discordant_score(mple.beta[0]).abs() < 1e-8);
    }

    #[test]
    fn separation_is_reported_as_monotone_likelihood() {
        let ds = SurvivalDataset::new(
            vec![1.0, 2.0],
            vec![1.0, 1.0],
            Mat::from_rows(&[&[1.0], &[-1.0]]),
        )
        .unwrap();
        let idx = risk_index(&ds);
        match fit_mple(&ds, &idx, 1e-8, 400) {
            Err(Error::MonotoneLikelihood { .. }) => {}
            other => panic!("expected MonotoneLikelihood, got {other:?}"),
        }
    }

    #[test]
    fn perfectly_concordant_data_diverges() {
        // events in strictly descending covariate order: monotone likelihood
        let (ds, idx) = hand_dataset();
        match fit_mple(&ds, &idx, 1e-9, 400) {
            Err(Error::MonotoneLikelihood { .. }) => {}
            other => panic!("expected MonotoneLikelihood, got {other:?}"),
        }
    }

    #[test]
    fn hand_lambda_grid() {
        let (ds, idx) = hand_dataset();
        let g1 = lambda_grid(&ds, &idx, 1, 0.5).unwrap();
        assert_eq!(g1.len(), 1);
        assert!((g1[0] - 0.5).abs() < 1e-15);
        let g3 = lambda_grid(&ds, &idx, 3, 0.01).unwrap();
        assert!((g3[0] - 0.5).abs() < 1e-15);
        assert!((g3[1] - 0.05).abs() < 1e-15);
        assert!((g3[2] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn cv_single_candidate_chooses_zero() {
        let mut times = Vec::new();
        let mut status = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rng = SplitMix64::new(5);
        for i in 0..24 {
            times.push(1.0 + i as f64 * 0.25 + rng.next_f64_open01());
            status.push(if i % 3 == 0 { 0.0 } else { 1.0 });
            rows.push(vec![rng.next_standard_normal()]);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ds = SurvivalDataset::new(times, status, Mat::from_rows(&refs)).unwrap();
        let curve = cv_lambda(&ds, &[0.2], 3, 9, CvLoss::HeldOut, 1e-7, 200).unwrap();
        assert_eq!(curve.chosen, 0);
        assert_eq!(curve.losses.len(), 1);
    }

    #[test]
    fn cv_tie_prefers_first_entry() {
        let (losses, chosen) = {
            let v = vec![3.0, 3.0, 4.0];
            let c = argmin_first(&v);
            (v, c)
        };
        assert_eq!(chosen, 0);
        assert_eq!(losses[chosen], 3.0);
    }

    #[test]
    fn folds_are_deterministic_and_balanced() {
        let f1 = seeded_folds(103, 5, 42);
        let f2 = seeded_folds(103, 5, 42);
        assert_eq!(f1, f2);
        for k in 0..5 {
            let size = f1.iter().filter(|&&f| f == k).count();
            assert!((20..=21).contains(&size));
        }
    }
}
