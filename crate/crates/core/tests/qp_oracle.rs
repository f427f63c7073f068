//! Dual active-set solutions cross-checked against an independent
//! projected-gradient oracle and full KKT recomputation.

use coxdebias_core::kernel::SigmaHat;
use coxdebias_core::linalg::{norm_inf, Mat};
use coxdebias_core::qp::{kkt_check, solve_qp, theta_row_problem};
use coxdebias_core::rng::SplitMix64;
use coxdebias_core::Error;
use coxdebias_testkit::{pg_solve_qp, random_qp_instance};

#[test]
fn random_instances_agree_with_projected_gradient_oracle() {
    let mut rng = SplitMix64::new(314);
    let mut solved = 0;
    for case in 0..60 {
        let p = 2 + (rng.next_u64() % 19) as usize;
        let m = 1 + (rng.next_u64() % 60) as usize;
        let prob = random_qp_instance(p, m, 22_000 + case);
        let sol = match solve_qp(&prob, 1e-10) {
            Ok(s) => s,
            Err(Error::Infeasible) => panic!("case {case}: feasible instance reported infeasible"),
            Err(e) => panic!("case {case}: {e}"),
        };
        let report = kkt_check(&prob, &sol);
        assert!(
            report.max_violation() < 1e-8,
            "case {case}: kkt violation {:?}",
            report
        );
        if let Some(oracle) = pg_solve_qp(&prob, 1e-9, 400_000) {
            let diff: Vec<f64> = sol.x.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            assert!(
                norm_inf(&diff) < 1e-5,
                "case {case}: active-set vs oracle gap {}",
                norm_inf(&diff)
            );
            solved += 1;
        }
    }
    // the oracle must have converged on the vast majority of instances
    assert!(solved >= 55, "oracle converged on only {solved}/60");
}

#[test]
fn multipliers_are_nonnegative_and_complementary() {
    for case in 0..20 {
        let prob = random_qp_instance(6, 18, 900 + case);
        let sol = solve_qp(&prob, 1e-10).unwrap();
        for &mu in &sol.multipliers {
            assert!(mu >= -1e-12, "negative multiplier {mu}");
        }
        let report = kkt_check(&prob, &sol);
        assert!(report.complementarity.abs() < 1e-8);
        assert!(report.feasibility > -1e-9);
    }
}

#[test]
fn theta_row_problem_matches_oracle_on_dense_sigma() {
    let mut rng = SplitMix64::new(555);
    for case in 0..10 {
        let p = 3 + (rng.next_u64() % 10) as usize;
        // random well-conditioned SPD sigma
        let mut a = Mat::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                a[(i, j)] = rng.next_standard_normal() / (p as f64).max(2.0);
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
        sigma.add_to_diag(1.0);
        let gamma = 0.02 + 0.1 * rng.next_f64_open01();
        let j = (rng.next_u64() as usize) % p;
        let prob = theta_row_problem(&sigma, j, gamma);
        let sol = solve_qp(&prob, 1e-10).unwrap();
        let sigma_hat = SigmaHat {
            matrix: sigma.clone(),
            at_beta: vec![0.0; p],
        };
        let row =
            coxdebias_core::qp::solve_theta_row(&sigma_hat, j, gamma, 1e-10).unwrap();
        let gap: Vec<f64> = row.iter().zip(&sol.x).map(|(a, b)| a - b).collect();
        assert!(norm_inf(&gap) < 1e-10);
        if let Some(oracle) = pg_solve_qp(&prob, 1e-10, 400_000) {
            let diff: Vec<f64> = sol.x.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            assert!(
                norm_inf(&diff) < 1e-5,
                "case {case}: gap to oracle {}",
                norm_inf(&diff)
            );
        }
    }
}
