//! Independent oracles shared by the workspace test suites: finite
//! differences, a projected-gradient QP solver, quadrature-based
//! distribution functions, and random instance generators.
//!
//! Everything here deliberately avoids the implementation paths it is used
//! to check: the QP oracle is a first-order dual method with its own
//! factorization, and the normal CDF comes from adaptive quadrature rather
//! than the rational approximations in the main crate.

use coxdebias_core::data::SurvivalDataset;
use coxdebias_core::linalg::Mat;
use coxdebias_core::qp::QpProblem;
use coxdebias_core::rng::SplitMix64;

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let up = f(&xp);
        xp[j] = orig - h;
        let down = f(&xp);
        xp[j] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Central finite-difference Jacobian of a vector function (row `i` is the
/// derivative of output `i`).
pub fn fd_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let dim_out = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; dim_out];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let up = f(&xp);
        xp[j] = orig - h;
        let down = f(&xp);
        xp[j] = orig;
        for i in 0..dim_out {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain dense Cholesky solve, local to the oracle.
struct LocalChol {
    n: usize,
    l: Vec<f64>,
}

impl LocalChol {
    fn factor(a: &Mat) -> Option<Self> {
        let n = a.nrows();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 {
                return None;
            }
            l[j * n + j] = d.sqrt();
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / l[j * n + j];
            }
        }
        Some(LocalChol { n, l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] = x[i] - self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] = x[i] - self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }
}

/// Solves `min x'Qx/2 + d'x  s.t.  Cx >= b` by accelerated projected
/// gradient ascent on the dual (nonnegative multipliers), run to tight
/// tolerance. Returns `None` when the iteration budget is exhausted before
/// the optimality residuals settle.
pub fn pg_solve_qp(prob: &QpProblem, tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let p = prob.q.nrows();
    let m = prob.c.nrows();
    let chol = LocalChol::factor(&prob.q)?;
    if m == 0 {
        let neg_d: Vec<f64> = prob.d.iter().map(|v| -v).collect();
        return Some(chol.solve(&neg_d));
    }
    // M = C Q^{-1} C', v = C Q^{-1} d
    let qinv_ct: Vec<Vec<f64>> = (0..m).map(|i| chol.solve(prob.c.row(i))).collect();
    let mut mmat = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            mmat[i * m + j] = dot(prob.c.row(i), &qinv_ct[j]);
        }
    }
    let qinv_d = chol.solve(&prob.d);
    let v: Vec<f64> = (0..m).map(|i| dot(prob.c.row(i), &qinv_d)).collect();
    // Lipschitz constant of the dual gradient via power iteration on M
    let mut pw = vec![1.0_f64; m];
    let mut lip = 1.0_f64;
    for _ in 0..200 {
        let mut next = vec![0.0; m];
        for (i, slot) in next.iter_mut().enumerate() {
            *slot = dot(&mmat[i * m..(i + 1) * m], &pw);
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        for x in &mut next {
            *x /= norm;
        }
        lip = norm;
        pw = next;
    }
    let step = 1.0 / (lip * 1.01 + 1e-12);

    let grad = |mu: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| prob.b[i] - (dot(&mmat[i * m..(i + 1) * m], mu) - v[i]))
            .collect()
    };
    let primal = |mu: &[f64]| -> Vec<f64> {
        // x = Q^{-1}(C' mu - d)
        let mut rhs = vec![0.0; p];
        for i in 0..m {
            for (r, &cij) in rhs.iter_mut().zip(prob.c.row(i)) {
                *r += mu[i] * cij;
            }
        }
        for (r, &di) in rhs.iter_mut().zip(&prob.d) {
            *r -= di;
        }
        chol.solve(&rhs)
    };

    let mut mu = vec![0.0; m];
    let mut y = mu.clone();
    let mut t = 1.0_f64;
    for iter in 0..max_iter {
        let g = grad(&y);
        let mut next: Vec<f64> = y
            .iter()
            .zip(&g)
            .map(|(yi, gi)| (yi + step * gi).max(0.0))
            .collect();
        // adaptive restart on loss of ascent alignment
        let aligned: f64 = next
            .iter()
            .zip(&mu)
            .zip(&y)
            .map(|((n, m_old), yi)| (n - yi) * (n - m_old))
            .sum();
        if aligned < 0.0 {
            t = 1.0;
            y = mu.clone();
            let g = grad(&y);
            next = y
                .iter()
                .zip(&g)
                .map(|(yi, gi)| (yi + step * gi).max(0.0))
                .collect();
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let accel = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&mu)
            .map(|(n, o)| n + accel * (n - o))
            .collect();
        mu = next;
        t = t_next;
        if iter % 50 == 0 || iter + 1 == max_iter {
            // optimality: projected-gradient residual and primal feasibility
            let g = grad(&mu);
            let res = mu
                .iter()
                .zip(&g)
                .map(|(mi, gi)| (mi - (mi + step * gi).max(0.0)).abs() / step)
                .fold(0.0_f64, f64::max);
            let x = primal(&mu);
            let feas = (0..m)
                .map(|i| prob.b[i] - dot(prob.c.row(i), &x))
                .fold(0.0_f64, f64::max);
            if res < tol && feas < tol {
                return Some(x);
            }
        }
    }
    None
}

/// Random strictly convex, feasible QP instance with `p` variables and `m`
/// constraints; roughly half the constraints are near-active at the
/// feasible anchor point.
pub fn random_qp_instance(p: usize, m: usize, seed: u64) -> QpProblem {
    let mut rng = SplitMix64::new(seed);
    let mut a = Mat::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] = rng.next_standard_normal() / (p as f64).sqrt();
        }
    }
    let mut q = Mat::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            q[(i, j)] = dot(a.row(i), a.row(j));
        }
    }
    q.add_to_diag(0.5 + rng.next_f64_open01());
    let d: Vec<f64> = (0..p).map(|_| rng.next_standard_normal()).collect();
    let mut c = Mat::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            c[(i, j)] = rng.next_standard_normal();
        }
    }
    let x0: Vec<f64> = (0..p).map(|_| 0.3 * rng.next_standard_normal()).collect();
    let b: Vec<f64> = (0..m)
        .map(|i| {
            let slack = if rng.next_u64() % 2 == 0 {
                0.05 * rng.next_f64_open01()
            } else {
                rng.next_f64_open01()
            };
            dot(c.row(i), &x0) - slack
        })
        .collect();
    QpProblem { q, d, c, b }
}

/// Adaptive Simpson quadrature.
pub fn integrate<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), mid, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        mid: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, mid, fm);
        let (right, rm, frm) = simpson(f, mid, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, mid, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, mid, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb) = (f(a), f(b));
    let (whole, mid, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, mid, fm, tol, 50)
}

/// Standard normal CDF by quadrature of the density (independent of the
/// rational approximations under test).
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    if x < -12.0 {
        return 0.0;
    }
    if x > 12.0 {
        return 1.0;
    }
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if x >= 0.0 {
        0.5 + integrate(density, 0.0, x, 1e-14)
    } else {
        0.5 - integrate(density, x, 0.0, 1e-14)
    }
}

/// Standard normal quantile by bisection against the quadrature CDF.
pub fn normal_quantile_bisect(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    let (mut lo, mut hi) = (-12.0, 12.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf_quadrature(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Probability that a Uniform(low, high) censoring time precedes a
/// unit-rate exponential event time, by quadrature.
pub fn uniform_censoring_probability(low: f64, high: f64) -> f64 {
    integrate(|c: f64| (-c).exp(), low, high, 1e-13) / (high - low)
}

/// Random right-censored dataset with continuous times and standard normal
/// covariates; a sizable minority of subjects are censored.
pub fn random_dataset(n: usize, p: usize, beta_scale: f64, seed: u64) -> SurvivalDataset {
    let mut rng = SplitMix64::new(seed);
    let mut x = Mat::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.next_standard_normal();
        }
    }
    let beta: Vec<f64> = (0..p)
        .map(|_| beta_scale * (rng.next_f64_open01() - 0.5))
        .collect();
    let mut times = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        let rate = dot(x.row(i), &beta).exp();
        let t = rng.next_exponential(rate);
        let c = rng.next_exponential(0.5 * rate);
        times.push(t.min(c));
        status.push(u8::from(t <= c));
    }
    // guarantee at least one event
    if !status.contains(&1) {
        status[0] = 1;
    }
    SurvivalDataset::from_parts_unchecked(times, status, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_cdf_matches_known_point() {
        // Phi(1.96) from standard tables
        let v = normal_cdf_quadrature(1.96);
        assert!((v - 0.9750021048517795).abs() < 1e-12, "v = {v}");
    }

    #[test]
    fn pg_oracle_solves_box_projection() {
        // minimize 0.5||x||^2 - x1 with x1 <= 0.5
        let prob = QpProblem {
            q: Mat::identity(2),
            d: vec![-1.0, 0.0],
            c: Mat::from_rows(&[&[-1.0, 0.0]]),
            b: vec![-0.5],
        };
        let x = pg_solve_qp(&prob, 1e-10, 200_000).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-7, "x = {x:?}");
        assert!(x[1].abs() < 1e-7);
    }

    #[test]
    fn censoring_quadrature_matches_closed_form() {
        let q = uniform_censoring_probability(1.0, 20.0);
        let closed = ((-1.0_f64).exp() - (-20.0_f64).exp()) / 19.0;
        assert!((q - closed).abs() < 1e-10, "q = {q}, closed = {closed}");
    }
}
