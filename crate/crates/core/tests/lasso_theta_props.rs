//! Stationarity, cross-solver agreement and inverse-estimate properties on
//! random survival data, plus proptest invariants for the pieces with
//! clean algebraic contracts.

use coxdebias_core::data::{risk_index, SurvivalDataset};
use coxdebias_core::kernel;
use coxdebias_core::lasso::{self, kkt_residual, CvLoss};
use coxdebias_core::linalg::Mat;
use coxdebias_core::rng::SplitMix64;
use coxdebias_core::theta::{self, ThresholdDenominator};
use coxdebias_testkit::random_dataset;
use proptest::prelude::*;

#[test]
fn converged_fits_satisfy_stationarity() {
    let mut rng = SplitMix64::new(404);
    for case in 0..12 {
        let n = 40 + (rng.next_u64() % 80) as usize;
        let p = 2 + (rng.next_u64() % 8) as usize;
        let ds = random_dataset(n, p, 1.0, 77_000 + case);
        let index = risk_index(&ds);
        let grid = lasso::lambda_grid(&ds, &index, 6, 0.05).unwrap();
        for &lambda in &grid {
            let fit = lasso::fit_lasso(&ds, &index, lambda, &[], 1e-7, 200).unwrap();
            assert!(fit.converged, "case {case}, lambda {lambda}");
            let score = kernel::score(&ds, &index, &fit.beta).unwrap();
            let kkt = kkt_residual(&score, &fit.beta, lambda);
            assert!(kkt <= 1e-6, "case {case}: kkt {kkt} at lambda {lambda}");
        }
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let ds = random_dataset(120, 6, 1.0, 909);
    let index = risk_index(&ds);
    let grid = lasso::lambda_grid(&ds, &index, 8, 0.02).unwrap();
    let mut warm = vec![0.0; 6];
    for &lambda in &grid {
        let warm_fit = lasso::fit_lasso(&ds, &index, lambda, &warm, 1e-9, 300).unwrap();
        let cold_fit = lasso::fit_lasso(&ds, &index, lambda, &[], 1e-9, 300).unwrap();
        for (a, b) in warm_fit.beta.iter().zip(&cold_fit.beta) {
            assert!((a - b).abs() < 1e-6, "lambda {lambda}: warm {a} vs cold {b}");
        }
        warm = warm_fit.beta;
    }
}

#[test]
fn penalized_at_zero_matches_newton_on_random_data() {
    for case in 0..6 {
        let ds = random_dataset(150, 3, 1.0, 31_000 + case);
        let index = risk_index(&ds);
        let lasso0 = lasso::fit_lasso(&ds, &index, 0.0, &[], 1e-9, 400).unwrap();
        let mple = lasso::fit_mple(&ds, &index, 1e-9, 200).unwrap();
        for (a, b) in lasso0.beta.iter().zip(&mple.beta) {
            assert!((a - b).abs() < 1e-5, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn cv_choice_matches_exhaustive_recomputation() {
    let ds = random_dataset(90, 4, 1.0, 1234);
    let index = risk_index(&ds);
    let grid = lasso::lambda_grid(&ds, &index, 8, 0.05).unwrap();
    let curve = lasso::cv_lambda(&ds, &grid, 5, 777, CvLoss::HeldOut, 1e-7, 200).unwrap();
    // independent recomputation: the chosen index minimizes the losses
    let mut best = 0;
    for (i, l) in curve.losses.iter().enumerate() {
        if *l < curve.losses[best] {
            best = i;
        }
    }
    assert_eq!(curve.chosen, best);
    // determinism
    let again = lasso::cv_lambda(&ds, &grid, 5, 777, CvLoss::HeldOut, 1e-7, 200).unwrap();
    for (a, b) in curve.losses.iter().zip(&again.losses) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn theta_identity_product_on_random_spd_up_to_p50() {
    let mut rng = SplitMix64::new(8);
    for &p in &[5usize, 20, 50] {
        let mut a = Mat::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                a[(i, j)] = rng.next_standard_normal() / (p as f64).sqrt();
            }
        }
        let mut sigma = Mat::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let mut s = 0.0;
                for k in 0..p {
                    s += a[(i, k)] * a[(j, k)];
                }
                sigma[(i, j)] = s;
            }
        }
        sigma.add_to_diag(0.8);
        let sig = kernel::SigmaHat {
            matrix: sigma.clone(),
            at_beta: vec![0.0; p],
        };
        let theta = theta::estimate_theta(&sig, 0.0, 1e-10).unwrap();
        assert_eq!(theta.ridge, 0.0);
        let prod = theta.matrix.matmul(&sigma);
        let mut worst = 0.0_f64;
        for i in 0..p {
            for j in 0..p {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - expect).abs());
            }
        }
        assert!(worst < 1e-6, "p = {p}: ||Theta Sigma - I||_inf = {worst}");
    }
}

#[test]
fn theta_rows_stay_feasible_on_fitted_sigma() {
    let ds = random_dataset(200, 8, 1.0, 2025);
    let index = risk_index(&ds);
    let fit = lasso::fit_lasso(&ds, &index, 0.05, &[], 1e-7, 200).unwrap();
    let sigma = kernel::sigma_hat(&ds, &index, &fit.beta).unwrap();
    for &gamma in &[0.05, 0.15, 0.4] {
        let theta = theta::estimate_theta(&sigma, gamma, 1e-9).unwrap();
        // re-check the constraint independently of the solver
        let lifted = {
            let mut m = sigma.matrix.clone();
            m.add_to_diag(theta.ridge);
            m
        };
        for j in 0..8 {
            let mut resid = lifted.matvec(theta.matrix.row(j));
            resid[j] -= 1.0;
            let r = resid.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(r <= gamma + 1e-8, "row {j} at gamma {gamma}: residual {r}");
            assert!(theta.diag(j) >= -1e-10);
        }
    }
}

#[test]
fn gamma_cv_is_deterministic_and_chooses_minimum() {
    let ds = random_dataset(80, 4, 1.0, 515);
    let lambda = 0.05;
    let builder = |train: &SurvivalDataset| {
        let idx = risk_index(train);
        let fit = lasso::fit_lasso(train, &idx, lambda, &[], 1e-7, 200)?;
        let sigma = kernel::sigma_hat(train, &idx, &fit.beta)?;
        Ok((fit.beta, sigma))
    };
    let grid = [0.05, 0.15, 0.4];
    let one = theta::cv_gamma(
        &ds,
        builder,
        &grid,
        3,
        0.1,
        99,
        ThresholdDenominator::SqrtDiag,
        1e-9,
    )
    .unwrap();
    let two = theta::cv_gamma(
        &ds,
        builder,
        &grid,
        3,
        0.1,
        99,
        ThresholdDenominator::SqrtDiag,
        1e-9,
    )
    .unwrap();
    for (a, b) in one.losses.iter().zip(&two.losses) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let mut best = 0;
    for (i, l) in one.losses.iter().enumerate() {
        if *l < one.losses[best] {
            best = i;
        }
    }
    assert_eq!(one.chosen, best);
    assert!(one.chosen < grid.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A single coordinate-descent update from the origin solves the 1-D
    /// quadratic subproblem in closed form.
    #[test]
    fn single_coordinate_update_is_soft_threshold(
        g in -2.0_f64..2.0,
        a in 0.7_f64..4.0,
        lambda in 0.0_f64..1.5,
    ) {
        // minimize g*t + a t^2/2 + lambda |t|
        let closed = {
            let z = -g / a;
            let t = lambda / a;
            if z > t { z - t } else if z < -t { z + t } else { 0.0 }
        };
        // numerically minimize on a fine grid around the candidate
        let mut best = (f64::INFINITY, 0.0);
        let mut t = -3.0;
        while t <= 3.0 {
            let obj = g * t + 0.5 * a * t * t + lambda * t.abs();
            if obj < best.0 {
                best = (obj, t);
            }
            t += 1e-4;
        }
        prop_assert!((closed - best.1).abs() < 5e-4, "closed {closed} vs grid {}", best.1);
    }

    /// Risk-set sizes at distinct event times are invariant to row
    /// permutations of the data.
    #[test]
    fn risk_index_is_permutation_invariant(seed in 0u64..500) {
        let ds = random_dataset(30, 2, 0.6, seed);
        let index = risk_index(&ds);
        let mut perm: Vec<usize> = (0..30).collect();
        let mut rng = SplitMix64::new(seed ^ 0xabcd);
        rng.shuffle(&mut perm);
        let shuffled = ds.select_rows(&perm);
        let shuffled_index = risk_index(&shuffled);
        let sizes = |idx: &coxdebias_core::data::RiskIndex| -> Vec<usize> {
            idx.tie_groups()
                .iter()
                .map(|&(start, _)| 30 - start)
                .collect()
        };
        prop_assert_eq!(sizes(&index), sizes(&shuffled_index));
    }

    /// The penalized values agree after permuting subjects.
    #[test]
    fn partial_likelihood_is_permutation_invariant(seed in 0u64..200) {
        let ds = random_dataset(25, 3, 0.8, seed);
        let index = risk_index(&ds);
        let beta = [0.3, -0.2, 0.1];
        let v = kernel::neg_log_partial_likelihood(&ds, &index, &beta).unwrap();
        let mut perm: Vec<usize> = (0..25).collect();
        let mut rng = SplitMix64::new(seed.wrapping_mul(31));
        rng.shuffle(&mut perm);
        let shuffled = ds.select_rows(&perm);
        let sidx = risk_index(&shuffled);
        let v2 = kernel::neg_log_partial_likelihood(&shuffled, &sidx, &beta).unwrap();
        prop_assert!((v - v2).abs() < 1e-12);
    }
}
