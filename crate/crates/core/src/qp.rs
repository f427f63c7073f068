//! Dual active-set solver for strictly convex quadratic programs with
//! linear inequality constraints, plus the specialization that produces one
//! row of the inverse-information estimate.
//!
//! The method starts at the unconstrained minimum `-Q^{-1} d`, prices the
//! most violated constraint, and takes combined primal-dual steps that keep
//! the multipliers nonnegative, dropping blocking constraints as needed.
//! The active-set working matrix `C_A Q^{-1} C_A^T` carries an incrementally
//! updated Cholesky factor, so each active-set change costs O(p^2 + k^2).

use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::SigmaHat;
use crate::linalg::{axpy, dot, norm_inf, Cholesky, GrowableCholesky, Mat};
use crate::{Error, Result};

/// Strictly convex QP: minimize `x^T Q x / 2 + d^T x` subject to `C x >= b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: Mat,
    pub d: Vec<f64>,
    /// Constraint normals, one row per inequality.
    pub c: Mat,
    pub b: Vec<f64>,
}

/// Solver output with independently checkable optimality data.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// `x^T Q x / 2 + d^T x` at the minimizer.
    pub objective: f64,
    /// Indices of binding constraints.
    pub active_set: Vec<usize>,
    /// Nonnegative duals aligned with `active_set`.
    pub multipliers: Vec<f64>,
    /// Max violation across stationarity, feasibility and complementarity.
    pub kkt_residual: f64,
    /// Number of active-set changes performed.
    pub changes: usize,
}

/// Residuals of the KKT system recomputed from scratch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||Q x + d - C^T mu||_inf`.
    pub stationarity: f64,
    /// `min_i (C x - b)_i`; negative values are violations.
    pub feasibility: f64,
    /// `max_i mu_i (C x - b)_i`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.stationarity
            .max((-self.feasibility).max(0.0))
            .max(self.complementarity.abs())
    }
}

/// Recomputes the KKT residuals of a proposed solution independently of the
/// solver's internal state.
pub fn kkt_check(prob: &QpProblem, sol: &QpSolution) -> KktReport {
    let mut station = prob.q.matvec(&sol.x);
    axpy(1.0, &prob.d, &mut station);
    for (&a, &mu) in sol.active_set.iter().zip(&sol.multipliers) {
        axpy(-mu, prob.c.row(a), &mut station);
    }
    let mut feas = f64::INFINITY;
    for i in 0..prob.c.nrows() {
        feas = feas.min(dot(prob.c.row(i), &sol.x) - prob.b[i]);
    }
    if prob.c.nrows() == 0 {
        feas = 0.0;
    }
    let mut compl = 0.0_f64;
    for (&a, &mu) in sol.active_set.iter().zip(&sol.multipliers) {
        let slack = dot(prob.c.row(a), &sol.x) - prob.b[a];
        let v = mu * slack;
        if v.abs() > compl.abs() {
            compl = v;
        }
    }
    KktReport {
        stationarity: norm_inf(&station),
        feasibility: feas,
        complementarity: compl,
    }
}

/// Solves the QP after factoring `Q`; fails with
/// [`Error::NotPositiveDefinite`] when the Cholesky factorization does.
pub fn solve_qp(prob: &QpProblem, tol: f64) -> Result<QpSolution> {
    let chol = Cholesky::factor(&prob.q).ok_or(Error::NotPositiveDefinite)?;
    let max_changes = 50 * prob.q.nrows().max(1);
    let mut sol = solve_with_factor(&chol, &prob.d, &prob.c, &prob.b, tol, max_changes)?;
    sol.kkt_residual = kkt_check(prob, &sol).max_violation();
    Ok(sol)
}

/// Dual active-set iteration sharing a precomputed factor of `Q`.
pub fn solve_with_factor(
    qchol: &Cholesky,
    d: &[f64],
    c: &Mat,
    b: &[f64],
    tol: f64,
    max_changes: usize,
) -> Result<QpSolution> {
    let p = qchol.dim();
    let m = c.nrows();
    debug_assert_eq!(d.len(), p);
    debug_assert_eq!(b.len(), m);

    // unconstrained minimum
    let mut x: Vec<f64> = d.iter().map(|v| -v).collect();
    qchol.solve_in_place(&mut x);

    let row_norms: Vec<f64> = (0..m)
        .map(|i| norm_inf(c.row(i)).max(1e-300))
        .collect();

    let mut active: Vec<usize> = Vec::new();
    let mut mu: Vec<f64> = Vec::new();
    let mut qinv_rows: Vec<Vec<f64>> = Vec::new(); // Q^{-1} c_a per active constraint
    let mut schur = GrowableCholesky::new(p + 1);
    let mut changes = 0usize;

    loop {
        // price the most violated constraint, scaled by the row norm
        let mut worst = -tol;
        let mut viol: Option<usize> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = (dot(c.row(i), &x) - b[i]) / row_norms[i];
            if s < worst {
                worst = s;
                viol = Some(i);
            }
        }
        let Some(add) = viol else { break };

        let cplus = c.row(add);
        let qinv_cplus = qchol.solve(cplus);
        let mut u_plus = 0.0;

        loop {
            if changes > max_changes {
                return Err(Error::MaxActiveSetChanges { limit: max_changes });
            }
            let k = active.len();
            // dual direction r solves S_A r = C_A Q^{-1} c+
            let w: Vec<f64> = qinv_rows
                .iter()
                .map(|qr| dot(qr, cplus))
                .collect();
            let r = if k > 0 { schur.solve(&w) } else { Vec::new() };
            // primal direction z = Q^{-1} c+ - sum r_a Q^{-1} c_a
            let mut z = qinv_cplus.clone();
            for (ra, qr) in r.iter().zip(&qinv_rows) {
                axpy(-ra, qr, &mut z);
            }
            let ztc = dot(&z, cplus);

            // max dual step before a multiplier hits zero
            let mut t1 = f64::INFINITY;
            let mut blocking = usize::MAX;
            for (i, (&mi, &ri)) in mu.iter().zip(&r).enumerate() {
                if ri > 1e-14 {
                    let t = mi / ri;
                    if t < t1 {
                        t1 = t;
                        blocking = i;
                    }
                }
            }

            let z_negligible = ztc <= 1e-13 * (1.0 + norm_inf(&qinv_cplus)) * row_norms[add];
            if z_negligible {
                // constraint normal lies in the span of the active normals
                if !t1.is_finite() {
                    return Err(Error::Infeasible);
                }
                for (mi, ri) in mu.iter_mut().zip(&r) {
                    *mi -= t1 * ri;
                }
                u_plus += t1;
                drop_constraint(
                    blocking,
                    &mut active,
                    &mut mu,
                    &mut qinv_rows,
                    &mut schur,
                );
                changes += 1;
                continue;
            }

            let slack = dot(cplus, &x) - b[add];
            let t2 = -slack / ztc;
            let t = t1.min(t2);
            axpy(t, &z, &mut x);
            for (mi, ri) in mu.iter_mut().zip(&r) {
                *mi -= t * ri;
            }
            u_plus += t;

            if t2 <= t1 {
                // full step: the new constraint becomes active
                let diag = dot(&qinv_cplus, cplus);
                if !schur.push(&w, diag) {
                    // numerically dependent; treat as a blocking drop
                    if !t1.is_finite() || blocking == usize::MAX {
                        return Err(Error::NotPositiveDefinite);
                    }
                    drop_constraint(
                        blocking,
                        &mut active,
                        &mut mu,
                        &mut qinv_rows,
                        &mut schur,
                    );
                    changes += 1;
                    continue;
                }
                active.push(add);
                mu.push(u_plus);
                qinv_rows.push(qinv_cplus);
                changes += 1;
                break;
            }
            // partial step: drop the blocking constraint and keep going
            drop_constraint(
                blocking,
                &mut active,
                &mut mu,
                &mut qinv_rows,
                &mut schur,
            );
            changes += 1;
        }
    }

    // objective and final residuals
    let qx = qchol.apply(&x);
    let objective = 0.5 * dot(&x, &qx) + dot(d, &x);
    let mut station: Vec<f64> = qx;
    axpy(1.0, d, &mut station);
    for (&a, &mi) in active.iter().zip(&mu) {
        axpy(-mi, c.row(a), &mut station);
    }
    let mut worst_feas = 0.0_f64;
    for i in 0..m {
        worst_feas = worst_feas.max(b[i] - dot(c.row(i), &x));
    }
    let kkt_residual = norm_inf(&station).max(worst_feas);
    Ok(QpSolution {
        x,
        objective,
        active_set: active,
        multipliers: mu,
        kkt_residual,
        changes,
    })
}

fn drop_constraint(
    idx: usize,
    active: &mut Vec<usize>,
    mu: &mut Vec<f64>,
    qinv_rows: &mut Vec<Vec<f64>>,
    schur: &mut GrowableCholesky,
) {
    schur.remove(idx);
    active.remove(idx);
    mu.remove(idx);
    qinv_rows.remove(idx);
}

/// Solves the row problem of the inverse-information estimate: minimize
/// `m^T Sigma m` subject to `||Sigma m - e_j||_inf <= gamma`, encoded as
/// `2p` linear inequalities.
///
/// `sigma` must already be positive definite (the caller applies any ridge
/// lift). A `gamma >= 1` admits the zero vector, which is optimal.
pub fn solve_theta_row(sigma: &SigmaHat, j: usize, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    assert!(gamma >= 0.0, "gamma must be nonnegative");
    let p = sigma.matrix.nrows();
    assert!(j < p, "row index out of bounds");
    if gamma == 0.0 {
        // equality-constrained case: the exact inverse column
        let chol = Cholesky::factor(&sigma.matrix).ok_or(Error::NotPositiveDefinite)?;
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        return Ok(chol.solve(&e));
    }
    let prob = theta_row_problem(&sigma.matrix, j, gamma);
    let sol = solve_qp(&prob, tol)?;
    Ok(sol.x)
}

/// Builds the explicit QP for one inverse-information row. The quadratic
/// term is `2 Sigma` so the reported objective equals `m^T Sigma m`.
pub fn theta_row_problem(sigma: &Mat, j: usize, gamma: f64) -> QpProblem {
    let p = sigma.nrows();
    let mut q = sigma.clone();
    q.scale(2.0);
    let mut c = Mat::zeros(2 * p, p);
    let mut b = vec![0.0; 2 * p];
    for i in 0..p {
        let row = sigma.row(i);
        c.row_mut(i).copy_from_slice(row);
        for (dst, &v) in c.row_mut(p + i).iter_mut().zip(row) {
            *dst = -v;
        }
        let e = if i == j { 1.0 } else { 0.0 };
        b[i] = e - gamma;
        b[p + i] = -e - gamma;
    }
    QpProblem {
        q,
        d: vec![0.0; p],
        c,
        b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_halfspace() {
        let prob = QpProblem {
            q: Mat::identity(2),
            d: vec![0.0, 0.0],
            c: Mat::from_rows(&[&[1.0, 0.0]]),
            b: vec![1.0],
        };
        let sol = solve_qp(&prob, 1e-10).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!(sol.x[1].abs() < 1e-12);
        assert!((sol.objective - 0.5).abs() < 1e-12);
        assert_eq!(sol.active_set, vec![0]);
        let report = kkt_check(&prob, &sol);
        assert!(report.max_violation() < 1e-10);
    }

    #[test]
    fn clipped_unconstrained_optimum() {
        // minimize 0.5 x'x - x_1 subject to x_1 <= 0.5
        let prob = QpProblem {
            q: Mat::identity(2),
            d: vec![-1.0, 0.0],
            c: Mat::from_rows(&[&[-1.0, 0.0]]),
            b: vec![-0.5],
        };
        let sol = solve_qp(&prob, 1e-10).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
        assert!(sol.x[1].abs() < 1e-12);
    }

    #[test]
    fn empty_feasible_set_is_infeasible() {
        let prob = QpProblem {
            q: Mat::identity(1),
            d: vec![0.0],
            c: Mat::from_rows(&[&[1.0], &[-1.0]]),
            b: vec![1.0, 0.0],
        };
        assert_eq!(solve_qp(&prob, 1e-10).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn indefinite_q_is_rejected() {
        let prob = QpProblem {
            q: Mat::from_vec(1, 1, vec![-1.0]),
            d: vec![0.0],
            c: Mat::zeros(0, 1),
            b: vec![],
        };
        assert_eq!(
            solve_qp(&prob, 1e-10).unwrap_err(),
            Error::NotPositiveDefinite
        );
    }

    #[test]
    fn unconstrained_report_is_gradient_norm() {
        let prob = QpProblem {
            q: Mat::identity(2),
            d: vec![1.0, -2.0],
            c: Mat::zeros(0, 2),
            b: vec![],
        };
        let sol = solve_qp(&prob, 1e-10).unwrap();
        assert!((sol.x[0] + 1.0).abs() < 1e-14);
        assert!((sol.x[1] - 2.0).abs() < 1e-14);
        let mut perturbed = sol.clone();
        perturbed.x[0] += 1e-3;
        let report = kkt_check(&prob, &perturbed);
        assert!((report.stationarity - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn theta_row_identity_sigma_shrinks_to_boundary() {
        let sigma = SigmaHat {
            matrix: Mat::identity(3),
            at_beta: vec![0.0; 3],
        };
        for j in 0..3 {
            let m = solve_theta_row(&sigma, j, 0.3, 1e-10).unwrap();
            for (i, v) in m.iter().enumerate() {
                let expect = if i == j { 0.7 } else { 0.0 };
                assert!((v - expect).abs() < 1e-10, "j={j}, m={m:?}");
            }
        }
    }

    #[test]
    fn theta_row_diagonal_example() {
        let sigma = SigmaHat {
            matrix: Mat::diag(&[2.0, 1.0]),
            at_beta: vec![0.0; 2],
        };
        let m = solve_theta_row(&sigma, 0, 0.1, 1e-10).unwrap();
        assert!((m[0] - 0.45).abs() < 1e-10, "m = {m:?}");
        assert!(m[1].abs() < 1e-10);
        let m2 = solve_theta_row(&sigma, 1, 0.1, 1e-10).unwrap();
        assert!(m2[0].abs() < 1e-10);
        assert!((m2[1] - 0.9).abs() < 1e-10);
    }

    #[test]
    fn theta_row_large_gamma_returns_zero() {
        let sigma = SigmaHat {
            matrix: Mat::diag(&[2.0, 1.0]),
            at_beta: vec![0.0; 2],
        };
        let m = solve_theta_row(&sigma, 0, 1.0, 1e-10).unwrap();
        assert!(norm_inf(&m) < 1e-12, "m = {m:?}");
    }

    #[test]
    fn theta_row_gamma_zero_is_exact_inverse_column() {
        let sigma = SigmaHat {
            matrix: Mat::from_vec(2, 2, vec![2.0, 0.5, 0.5, 1.0]),
            at_beta: vec![0.0; 2],
        };
        let m = solve_theta_row(&sigma, 0, 0.0, 1e-10).unwrap();
        // Sigma m = e_0 exactly
        let r = sigma.matrix.matvec(&m);
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
    }

    #[test]
    fn theta_row_objective_nonincreasing_in_gamma() {
        let sigma = SigmaHat {
            matrix: Mat::from_vec(3, 3, vec![2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]),
            at_beta: vec![0.0; 3],
        };
        let mut last = f64::INFINITY;
        for &g in &[0.0, 0.05, 0.1, 0.2, 0.4, 0.8] {
            let m = solve_theta_row(&sigma, 1, g, 1e-10).unwrap();
            let obj = dot(&m, &sigma.matrix.matvec(&m));
            assert!(obj <= last + 1e-10, "gamma={g}: {obj} > {last}");
            last = obj;
        }
    }
}
