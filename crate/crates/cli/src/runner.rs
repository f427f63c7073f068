//! Thread-parallel drivers. Workers pull task indices from a shared
//! counter; results are collected by index and reduced in order, so every
//! parallel routine here is bit-identical to its sequential counterpart in
//! the core crate (the tests assert it).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use coxdebias_core::data::SurvivalDataset;
use coxdebias_core::kernel::SigmaHat;
use coxdebias_core::lasso::seeded_folds;
use coxdebias_core::linalg::Mat;
use coxdebias_core::sim::{
    aggregate, run_single_replication, FitOptions, Method, ReplicationRecord, SimConfig,
    SimSummary, Target,
};
use coxdebias_core::theta::{
    cv_gamma_fold_losses, GammaCurve, ThetaHat, ThetaSolver, ThresholdDenominator,
};

#[allow(clippy::too_many_arguments)]
pub fn run_replications_parallel(
    cfg: &SimConfig,
    opts: &FitOptions,
    methods: &[Method],
    replications: usize,
    targets: &[Target],
    joint_targets: &[Vec<usize>],
    alpha: f64,
    threads: usize,
) -> SimSummary {
    let threads = threads.max(1).min(replications.max(1));
    if threads <= 1 {
        let records: Vec<ReplicationRecord> = (0..replications as u64)
            .map(|r| run_single_replication(cfg, opts, methods, targets, joint_targets, alpha, r))
            .collect();
        return aggregate(cfg, methods, targets, joint_targets, &records);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ReplicationRecord>>> = Mutex::new(vec![None; replications]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= replications {
                    break;
                }
                let record = run_single_replication(
                    cfg,
                    opts,
                    methods,
                    targets,
                    joint_targets,
                    alpha,
                    r as u64,
                );
                slots.lock().expect("replication slot lock")[r] = Some(record);
            });
        }
    });
    let records: Vec<ReplicationRecord> = slots
        .into_inner()
        .expect("replication slots")
        .into_iter()
        .map(|r| r.expect("replication completed"))
        .collect();
    aggregate(cfg, methods, targets, joint_targets, &records)
}

/// Sweep driver: every replication shares its fitted pipeline across the
/// whole gamma grid; returns one summary per gamma, deterministically.
#[allow(clippy::too_many_arguments)]
pub fn run_gamma_sweep_parallel(
    cfg: &SimConfig,
    opts: &FitOptions,
    gammas: &[f64],
    replications: usize,
    targets: &[Target],
    joint_targets: &[Vec<usize>],
    alpha: f64,
    threads: usize,
) -> Vec<(f64, SimSummary)> {
    let threads = threads.max(1).min(replications.max(1));
    let next = AtomicUsize::new(0);
    // slot per replication, then regroup by gamma
    let slots: Mutex<Vec<Option<Vec<ReplicationRecord>>>> = Mutex::new(vec![None; replications]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= replications {
                    break;
                }
                let records = coxdebias_core::sim::run_gamma_sweep_replication(
                    cfg,
                    opts,
                    gammas,
                    targets,
                    joint_targets,
                    alpha,
                    r as u64,
                );
                slots.lock().expect("sweep slot lock")[r] = Some(records);
            });
        }
    });
    let per_rep: Vec<Vec<ReplicationRecord>> = slots
        .into_inner()
        .expect("sweep slots")
        .into_iter()
        .map(|r| r.expect("sweep replication completed"))
        .collect();
    gammas
        .iter()
        .enumerate()
        .map(|(gi, &gamma)| {
            let records: Vec<ReplicationRecord> =
                per_rep.iter().map(|recs| recs[gi].clone()).collect();
            (
                gamma,
                aggregate(
                    cfg,
                    &[Method::QpDebias],
                    targets,
                    joint_targets,
                    &records,
                ),
            )
        })
        .collect()
}

/// Fold-parallel gamma cross-validation: the same folds, losses, and
/// selection as the sequential core routine, with per-fold work spread
/// across threads and the losses reduced in fold order.
#[allow(clippy::too_many_arguments)]
pub fn cv_gamma_parallel<F>(
    ds: &SurvivalDataset,
    sigma_builder: &F,
    gamma_grid: &[f64],
    fold_count: usize,
    alpha: f64,
    seed: u64,
    denominator: ThresholdDenominator,
    tol: f64,
    threads: usize,
) -> coxdebias_core::Result<GammaCurve>
where
    F: Fn(&SurvivalDataset) -> coxdebias_core::Result<(Vec<f64>, SigmaHat)> + Sync,
{
    let folds = seeded_folds(ds.n(), fold_count, seed);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<coxdebias_core::Result<Vec<f64>>>>> =
        Mutex::new(vec![None; fold_count]);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(fold_count) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= fold_count {
                    break;
                }
                let result = cv_gamma_fold_losses(
                    ds,
                    sigma_builder,
                    gamma_grid,
                    &folds,
                    k,
                    alpha,
                    denominator,
                    tol,
                );
                slots.lock().expect("fold slot lock")[k] = Some(result);
            });
        }
    });
    let mut losses = vec![0.0; gamma_grid.len()];
    for result in slots.into_inner().expect("fold slots") {
        let fold_losses = result.expect("fold completed")?;
        for (total, l) in losses.iter_mut().zip(&fold_losses) {
            *total += l;
        }
    }
    let mut chosen = 0;
    for (i, l) in losses.iter().enumerate() {
        if *l < losses[chosen] {
            chosen = i;
        }
    }
    Ok(GammaCurve {
        grid: gamma_grid.to_vec(),
        losses,
        fold_count,
        alpha,
        chosen,
        seed,
    })
}

/// Row-parallel assembly of the inverse-information estimate; identical to
/// the sequential core routine.
pub fn estimate_theta_parallel(
    sigma: &SigmaHat,
    gamma: f64,
    tol: f64,
    threads: usize,
) -> coxdebias_core::Result<ThetaHat> {
    let solver = ThetaSolver::new(sigma, tol)?;
    let p = solver.p();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<coxdebias_core::Result<(Vec<f64>, f64)>>>> =
        Mutex::new(vec![None; p]);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(p.max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= p {
                    break;
                }
                let result = solver
                    .solve_row(j, gamma)
                    .map(|(row, diag)| (row, diag.constraint_residual));
                slots.lock().expect("row slot lock")[j] = Some(result);
            });
        }
    });
    let mut matrix = Mat::zeros(p, p);
    let mut row_kkt = Vec::with_capacity(p);
    for (j, result) in slots.into_inner().expect("row slots").into_iter().enumerate() {
        let (row, residual) = result.expect("row completed")?;
        matrix.row_mut(j).copy_from_slice(&row);
        row_kkt.push(residual);
    }
    Ok(ThetaHat {
        matrix,
        gamma,
        ridge: solver.ridge(),
        row_kkt,
    })
}

/// Default worker count.
pub fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use coxdebias_core::data::risk_index;
    use coxdebias_core::sim::{Censoring, CovStructure, GammaRule, LambdaRule};
    use coxdebias_core::{kernel, lasso, theta};

    #[test]
    fn parallel_gamma_cv_matches_sequential_core() {
        let ds = coxdebias_testkit::random_dataset(90, 5, 1.0, 808);
        let lambda = 0.06;
        let builder = |train: &SurvivalDataset| {
            let idx = risk_index(train);
            let fit = lasso::fit_lasso(train, &idx, lambda, &[], 1e-7, 200)?;
            let sigma = kernel::sigma_hat(train, &idx, &fit.beta)?;
            Ok((fit.beta, sigma))
        };
        let grid = [0.05, 0.12, 0.3];
        let sequential = theta::cv_gamma(
            &ds,
            builder,
            &grid,
            4,
            0.1,
            55,
            ThresholdDenominator::SqrtDiag,
            1e-9,
        )
        .unwrap();
        let parallel = cv_gamma_parallel(
            &ds,
            &builder,
            &grid,
            4,
            0.1,
            55,
            ThresholdDenominator::SqrtDiag,
            1e-9,
            3,
        )
        .unwrap();
        assert_eq!(sequential.chosen, parallel.chosen);
        for (a, b) in sequential.losses.iter().zip(&parallel.losses) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn parallel_theta_matches_sequential_core() {
        let ds = coxdebias_testkit::random_dataset(120, 7, 1.0, 909);
        let idx = risk_index(&ds);
        let fit = lasso::fit_lasso(&ds, &idx, 0.05, &[], 1e-7, 200).unwrap();
        let sigma = kernel::sigma_hat(&ds, &idx, &fit.beta).unwrap();
        let sequential = theta::estimate_theta(&sigma, 0.15, 1e-9).unwrap();
        let parallel = estimate_theta_parallel(&sigma, 0.15, 1e-9, 3).unwrap();
        assert_eq!(sequential.ridge, parallel.ridge);
        for (a, b) in sequential
            .matrix
            .data()
            .iter()
            .zip(parallel.matrix.data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn parallel_and_sequential_summaries_agree_bitwise() {
        let cfg = SimConfig {
            n: 80,
            p: 5,
            beta0: vec![0.8, 0.0, -0.5, 0.0, 0.0],
            cov: CovStructure::Independent,
            truncation: Some(2.5),
            censoring: Censoring::Uniform {
                low: 1.0,
                high: 20.0,
            },
            seed: 2121,
        };
        let opts = FitOptions {
            lambda: LambdaRule::Fixed { value: 0.08 },
            gamma: GammaRule::Fixed { value: 0.25 },
            ..FitOptions::default()
        };
        let targets = [Target::Coordinate { index: 0 }];
        let methods = [Method::QpDebias, Method::Oracle];
        let seq = run_replications_parallel(&cfg, &opts, &methods, 6, &targets, &[], 0.05, 1);
        let par = run_replications_parallel(&cfg, &opts, &methods, 6, &targets, &[], 0.05, 3);
        assert_eq!(seq.rows.len(), par.rows.len());
        for (a, b) in seq.rows.iter().zip(&par.rows) {
            assert_eq!(a.bias.to_bits(), b.bias.to_bits());
            assert_eq!(a.mse.to_bits(), b.mse.to_bits());
            assert_eq!(a.coverage, b.coverage);
        }
    }
}
