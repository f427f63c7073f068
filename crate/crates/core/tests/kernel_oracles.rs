//! Derivative checks of the partial-likelihood kernel against central
//! finite differences, and spectrum checks of the curvature matrices.

use coxdebias_core::data::risk_index;
use coxdebias_core::kernel;
use coxdebias_core::linalg::sym_eigenvalue_range;
use coxdebias_core::rng::SplitMix64;
use coxdebias_testkit::{fd_gradient, fd_jacobian, random_dataset};

#[test]
fn score_matches_finite_differences_on_random_instances() {
    let mut rng = SplitMix64::new(2024);
    for case in 0..50 {
        let n = 10 + (rng.next_u64() % 51) as usize;
        let p = 1 + (rng.next_u64() % 10) as usize;
        let ds = random_dataset(n, p, 0.8, 1000 + case);
        let index = risk_index(&ds);
        let beta: Vec<f64> = (0..p).map(|_| 2.0 * rng.next_f64_open01() - 1.0).collect();

        let score = kernel::score(&ds, &index, &beta).unwrap();
        let value_fn =
            |b: &[f64]| kernel::neg_log_partial_likelihood(&ds, &index, b).unwrap();
        let fd = fd_gradient(value_fn, &beta, 1e-5);
        let scale = score
            .iter()
            .fold(1e-3_f64, |m, v| m.max(v.abs()));
        for (j, (s, f)) in score.iter().zip(&fd).enumerate() {
            assert!(
                (s - f).abs() <= 1e-6 * scale.max(1.0),
                "case {case}, coord {j}: score {s} vs fd {f}"
            );
        }
    }
}

#[test]
fn hessian_matches_finite_differences_of_score() {
    let mut rng = SplitMix64::new(77);
    for case in 0..25 {
        let n = 10 + (rng.next_u64() % 41) as usize;
        let p = 1 + (rng.next_u64() % 6) as usize;
        let ds = random_dataset(n, p, 0.8, 5000 + case);
        let index = risk_index(&ds);
        let beta: Vec<f64> = (0..p).map(|_| 2.0 * rng.next_f64_open01() - 1.0).collect();

        let hess = kernel::hessian(&ds, &index, &beta).unwrap();
        let score_fn = |b: &[f64]| kernel::score(&ds, &index, b).unwrap();
        let fd = fd_jacobian(score_fn, &beta, 1e-5);
        let scale = (0..p)
            .map(|i| hess.row(i).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .fold(1.0_f64, f64::max);
        for i in 0..p {
            for j in 0..p {
                assert!(
                    (hess[(i, j)] - fd[i][j]).abs() <= 1e-5 * scale,
                    "case {case}: H[{i},{j}] = {} vs fd {}",
                    hess[(i, j)],
                    fd[i][j]
                );
            }
        }
        // symmetry and positive semidefiniteness
        for i in 0..p {
            for j in 0..p {
                assert!((hess[(i, j)] - hess[(j, i)]).abs() < 1e-12);
            }
        }
        let (min_eig, _) = sym_eigenvalue_range(&hess, 60);
        assert!(min_eig >= -1e-10, "case {case}: min eig {min_eig}");
    }
}

#[test]
fn sigma_hat_is_positive_semidefinite_and_symmetric() {
    let mut rng = SplitMix64::new(99);
    for case in 0..25 {
        let n = 15 + (rng.next_u64() % 46) as usize;
        let p = 1 + (rng.next_u64() % 10) as usize;
        let ds = random_dataset(n, p, 0.8, 9000 + case);
        let index = risk_index(&ds);
        let beta: Vec<f64> = (0..p).map(|_| rng.next_f64_open01() - 0.5).collect();
        let sigma = kernel::sigma_hat(&ds, &index, &beta).unwrap();
        for i in 0..p {
            for j in 0..p {
                assert!((sigma.matrix[(i, j)] - sigma.matrix[(j, i)]).abs() < 1e-12);
            }
        }
        let (min_eig, _) = sym_eigenvalue_range(&sigma.matrix, 60);
        assert!(min_eig >= -1e-10, "case {case}: min eig {min_eig}");
    }
}

#[test]
fn derivative_checks_at_documented_beta() {
    // the documented finite-difference cases at beta = 0.3
    let ds = random_dataset(40, 1, 1.0, 4242);
    let index = risk_index(&ds);
    let beta = [0.3];
    let score = kernel::score(&ds, &index, &beta).unwrap();
    let fd = fd_gradient(
        |b| kernel::neg_log_partial_likelihood(&ds, &index, b).unwrap(),
        &beta,
        1e-5,
    );
    assert!((score[0] - fd[0]).abs() <= 1e-6 * score[0].abs().max(1.0));

    let hess = kernel::hessian(&ds, &index, &beta).unwrap();
    let fd_h = fd_jacobian(|b| kernel::score(&ds, &index, b).unwrap(), &beta, 1e-5);
    assert!((hess[(0, 0)] - fd_h[0][0]).abs() <= 1e-5 * hess[(0, 0)].abs().max(1.0));
}

#[test]
fn moments_consistency_eta_times_mu0_equals_mu1() {
    let ds = random_dataset(60, 4, 0.7, 31);
    let index = risk_index(&ds);
    let beta = [0.2, -0.4, 0.1, 0.0];
    let mut t = 0.0;
    for _ in 0..10 {
        t += 0.05;
        if let Ok(m) = kernel::moments(&ds, &index, &beta, t) {
            for j in 0..4 {
                assert!(
                    (m.eta[j] * m.mu0 - m.mu1[j]).abs() <= 1e-12 * m.mu0.abs().max(1.0),
                    "eta*mu0 != mu1 at t={t}"
                );
            }
            // mu2 - mu1 mu1'/mu0 is PSD (weighted covariance)
            let p = 4;
            let mut cov = m.mu2.clone();
            for i in 0..p {
                for j in 0..p {
                    cov[(i, j)] -= m.mu1[i] * m.mu1[j] / m.mu0;
                }
            }
            let (min_eig, _) = sym_eigenvalue_range(&cov, 60);
            assert!(min_eig >= -1e-10 * m.mu0.max(1.0));
        }
    }
}
