//! Synthetic right-censored survival data and the replicated experiment
//! harness: generation, per-replication fitting of the compared estimators,
//! deterministic aggregation of bias/coverage/SE/MSE, and the error
//! decomposition diagnostic available when the truth is known.
//!
//! Replications draw from streams derived purely from `(seed, replication)`,
//! so they can run in any order (or concurrently, as the companion crate
//! does) and aggregate to bit-identical summaries.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{risk_index, RiskIndex, SurvivalDataset};
use crate::inference;
use crate::kernel::{self, SigmaHat};
use crate::lasso::{self, CoxFit, CvLoss};
use crate::linalg::{dot, Cholesky, Mat};
use crate::rng::SplitMix64;
use crate::theta::{self, ThetaHat, ThresholdDenominator};
use crate::{Error, Result};

/// Covariance structure of the generated covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovStructure {
    Independent,
    Ar1 { rho: f64 },
}

/// Censoring mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Censoring {
    /// Exponential censoring with rate `kappa * exp(x' beta0)`.
    Exponential { kappa: f64 },
    /// Uniform censoring on `[low, high]`.
    Uniform { low: f64, high: f64 },
}

/// One generative scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub beta0: Vec<f64>,
    pub cov: CovStructure,
    /// Per-entry clip bound applied after drawing correlated normals;
    /// `None` leaves the draws untruncated.
    pub truncation: Option<f64>,
    pub censoring: Censoring,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n = {} is too small", self.n)));
        }
        if self.p < 1 {
            return Err(Error::InvalidConfig("p must be at least 1".into()));
        }
        if self.beta0.len() != self.p {
            return Err(Error::InvalidConfig(format!(
                "beta0 has length {}, expected p = {}",
                self.beta0.len(),
                self.p
            )));
        }
        if let CovStructure::Ar1 { rho } = self.cov {
            if !(-1.0 < rho && rho < 1.0) {
                return Err(Error::InvalidConfig(format!("rho = {rho} outside (-1,1)")));
            }
        }
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig(format!("truncation = {t} must be positive")));
            }
        }
        match self.censoring {
            Censoring::Exponential { kappa } => {
                if !(kappa > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "censoring rate multiplier {kappa} must be positive"
                    )));
                }
            }
            Censoring::Uniform { low, high } => {
                if !(low < high) || low < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "uniform censoring bounds ({low}, {high}) invalid"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sparse coefficient layout used across the simulation designs: `beta1` in
/// the first coordinate and the values (1, 1, 0.5, 0.5) at the evenly
/// spaced 0-based indices p/5, 2p/5, 3p/5, 4p/5.
pub fn beta0_spaced(p: usize, beta1: f64) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    beta[0] = beta1;
    let spots = [p / 5, 2 * p / 5, 3 * p / 5, 4 * p / 5];
    let values = [1.0, 1.0, 0.5, 0.5];
    for (&idx, &v) in spots.iter().zip(&values) {
        if idx > 0 && idx < p {
            beta[idx] = v;
        }
    }
    beta
}

/// Generates one dataset from the scenario using its own seed.
/// Deterministic: the same config produces bit-identical data.
pub fn generate_dataset(cfg: &SimConfig) -> SurvivalDataset {
    let mut rng = SplitMix64::new(cfg.seed);
    generate_with_stream(cfg, &mut rng)
}

/// Generates one dataset from an explicit stream (used per replication).
pub fn generate_with_stream(cfg: &SimConfig, rng: &mut SplitMix64) -> SurvivalDataset {
    let (n, p) = (cfg.n, cfg.p);
    let mut x = Mat::zeros(n, p);
    let mut times = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        {
            let row = x.row_mut(i);
            match cfg.cov {
                CovStructure::Independent => {
                    for v in row.iter_mut() {
                        *v = rng.next_standard_normal();
                    }
                }
                CovStructure::Ar1 { rho } => {
                    let scale = libm::sqrt(1.0 - rho * rho);
                    let mut prev = rng.next_standard_normal();
                    row[0] = prev;
                    for v in row.iter_mut().skip(1) {
                        prev = rho * prev + scale * rng.next_standard_normal();
                        *v = prev;
                    }
                }
            }
            if let Some(bound) = cfg.truncation {
                for v in row.iter_mut() {
                    *v = v.clamp(-bound, bound);
                }
            }
        }
        let rate = libm::exp(dot(x.row(i), &cfg.beta0));
        let t = rng.next_exponential(rate);
        let c = match cfg.censoring {
            Censoring::Exponential { kappa } => rng.next_exponential(kappa * rate),
            Censoring::Uniform { low, high } => rng.next_uniform(low, high),
        };
        times.push(t.min(c));
        status.push(u8::from(t <= c));
    }
    SurvivalDataset::from_parts_unchecked(times, status, x)
}

/// Estimators compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    QpDebias,
    Lasso,
    Mple,
    Oracle,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::QpDebias => "qp_debias",
            Method::Lasso => "lasso",
            Method::Mple => "mple",
            Method::Oracle => "oracle",
        }
    }
}

/// Penalty selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaRule {
    Fixed { value: f64 },
    Cv,
}

/// Constraint-width selection rule for the inverse-information estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GammaRule {
    Fixed { value: f64 },
    Cv,
}

/// Fitting options shared by every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: LambdaRule,
    pub lambda_folds: usize,
    pub lambda_grid_count: usize,
    pub lambda_grid_ratio: f64,
    pub cv_loss: CvLoss,
    pub gamma: GammaRule,
    pub gamma_folds: usize,
    /// Bonferroni level of the hard-thresholding step inside the gamma
    /// cross-validation.
    pub threshold_alpha: f64,
    pub threshold_denominator: ThresholdDenominator,
    /// Explicit gamma grid; `None` uses the default multipliers of
    /// `sqrt(log(p)/n)`.
    pub gamma_grid: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub qp_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: LambdaRule::Cv,
            lambda_folds: 10,
            lambda_grid_count: 50,
            lambda_grid_ratio: 0.01,
            cv_loss: CvLoss::HeldOut,
            gamma: GammaRule::Cv,
            gamma_folds: 5,
            threshold_alpha: 0.1,
            threshold_denominator: ThresholdDenominator::SqrtDiag,
            gamma_grid: None,
            tol: 1e-7,
            max_iter: 200,
            qp_tol: 1e-9,
        }
    }
}

/// A quantity whose sampling behavior the harness tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    /// A single coordinate (0-based).
    Coordinate { index: usize },
    /// An arbitrary loading vector.
    Loading { c: Vec<f64> },
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::Coordinate { index } => format!("b{}", index + 1),
            Target::Loading { .. } => "loading".to_string(),
        }
    }

    pub fn loading(&self, p: usize) -> Vec<f64> {
        match self {
            Target::Coordinate { index } => {
                let mut c = vec![0.0; p];
                c[*index] = 1.0;
                c
            }
            Target::Loading { c } => c.clone(),
        }
    }

    pub fn truth(&self, beta0: &[f64]) -> f64 {
        match self {
            Target::Coordinate { index } => beta0[*index],
            Target::Loading { c } => dot(c, beta0),
        }
    }
}

/// Per-target outcome of one method on one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetRecord {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub covered: Option<bool>,
}

/// Joint chi-square test outcome on one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointRecord {
    pub statistic: f64,
    pub reject: bool,
    /// Wald rejections for each coordinate of the joint target, at the
    /// same level, against the true values.
    pub wald_rejects: Vec<bool>,
}

/// Everything one method produced on one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub targets: Vec<TargetRecord>,
    pub joints: Vec<JointRecord>,
    pub error: Option<String>,
}

/// One replication's records across methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub methods: Vec<MethodRecord>,
}

/// Aggregated per-method, per-target metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub target: String,
    pub truth: f64,
    pub bias: f64,
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
    pub mse: f64,
    /// Replications that produced a usable fit for this method.
    pub used: usize,
    pub failures: usize,
}

/// Aggregated joint-test rejection rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSummaryRow {
    pub method: String,
    pub target: String,
    pub rejection_rate: f64,
    pub wald_rejection_rate: f64,
    pub used: usize,
    pub failures: usize,
}

/// Scenario-level aggregate over replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub replications: usize,
    pub rows: Vec<SummaryRow>,
    pub joint_rows: Vec<JointSummaryRow>,
    /// Failure reasons with counts, per method.
    pub failure_reasons: Vec<(String, String, usize)>,
}

impl SimSummary {
    pub fn row(&self, method: Method, target_label: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method.label() && r.target == target_label)
    }
}

/// Penalty selection plus the penalized fit.
#[derive(Debug, Clone)]
pub struct LassoStage {
    pub lambda: f64,
    pub lambda_curve: Option<crate::lasso::CvCurve>,
    pub fit: CoxFit,
}

/// Runs the penalty-selection stage of the debiased pipeline. The
/// cross-validation seed derives from `rng` (tag 1), so the whole pipeline
/// is a pure function of `(data, options, stream)`.
pub fn fit_lasso_stage(
    ds: &SurvivalDataset,
    index: &RiskIndex,
    opts: &FitOptions,
    rng: &SplitMix64,
) -> Result<LassoStage> {
    let (lambda, lambda_curve) = match opts.lambda {
        LambdaRule::Fixed { value } => (value, None),
        LambdaRule::Cv => {
            let grid =
                lasso::lambda_grid(ds, index, opts.lambda_grid_count, opts.lambda_grid_ratio)?;
            let curve = lasso::cv_lambda(
                ds,
                &grid,
                opts.lambda_folds,
                rng.child_seed(1),
                opts.cv_loss,
                opts.tol,
                opts.max_iter,
            )?;
            (curve.grid[curve.chosen], Some(curve))
        }
    };
    let fit = lasso::fit_lasso(ds, index, lambda, &[], opts.tol, opts.max_iter)?;
    Ok(LassoStage {
        lambda,
        lambda_curve,
        fit,
    })
}

/// Everything the debiasing stage produces on top of a penalized fit.
#[derive(Debug, Clone)]
pub struct DebiasStage {
    pub sigma: SigmaHat,
    pub gamma: f64,
    pub gamma_curve: Option<crate::theta::GammaCurve>,
    pub theta: ThetaHat,
    pub score_at_fit: Vec<f64>,
    pub debiased: Vec<f64>,
}

/// Runs the inverse-information and bias-correction stage: the
/// quadratic-form matrix at the fit, gamma selection (tag-2 stream when
/// cross-validated), the row-wise inverse estimate and the debiased
/// coefficients.
pub fn fit_debias_stage(
    ds: &SurvivalDataset,
    index: &RiskIndex,
    opts: &FitOptions,
    lambda: f64,
    fit: &CoxFit,
    rng: &SplitMix64,
) -> Result<DebiasStage> {
    let sigma = kernel::sigma_hat(ds, index, &fit.beta)?;
    let grid_storage;
    let grid: &[f64] = match &opts.gamma_grid {
        Some(g) => g,
        None => {
            grid_storage = theta::default_gamma_grid(ds.p(), ds.n());
            &grid_storage
        }
    };
    let (gamma, gamma_curve) = match opts.gamma {
        GammaRule::Fixed { value } => (value, None),
        GammaRule::Cv => {
            let tol = opts.tol;
            let max_iter = opts.max_iter;
            let builder = |train: &SurvivalDataset| -> Result<(Vec<f64>, SigmaHat)> {
                let train_index = risk_index(train);
                let fit = lasso::fit_lasso(train, &train_index, lambda, &[], tol, max_iter)?;
                let sigma = kernel::sigma_hat(train, &train_index, &fit.beta)?;
                Ok((fit.beta, sigma))
            };
            let curve = theta::cv_gamma(
                ds,
                builder,
                grid,
                opts.gamma_folds,
                opts.threshold_alpha,
                rng.child_seed(2),
                opts.threshold_denominator,
                opts.qp_tol,
            )?;
            (curve.grid[curve.chosen], Some(curve))
        }
    };
    let theta = theta::estimate_theta(&sigma, gamma, opts.qp_tol)?;
    let score_at_fit = kernel::score(ds, index, &fit.beta)?;
    let debiased = crate::inference::debias(&fit.beta, &theta, &score_at_fit)?;
    Ok(DebiasStage {
        sigma,
        gamma,
        gamma_curve,
        theta,
        score_at_fit,
        debiased,
    })
}

/// The dataset a given replication draws, as a pure function of the
/// scenario seed and the replication index.
pub fn replication_dataset(cfg: &SimConfig, replication: u64) -> SurvivalDataset {
    let rep_rng = SplitMix64::for_replication(cfg.seed, replication);
    let mut data_rng = rep_rng.child(0);
    generate_with_stream(cfg, &mut data_rng)
}

/// Stream from which a replication derives its cross-validation seeds.
pub fn replication_stream(cfg: &SimConfig, replication: u64) -> SplitMix64 {
    SplitMix64::for_replication(cfg.seed, replication)
}

/// Restricted-support Newton fit with its covariance embedded back into
/// p dimensions (zeros off the support).
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub fit: CoxFit,
    pub support: Vec<usize>,
    /// `p x p` covariance of the embedded estimate: `(n H_S)^{-1}` on the
    /// support block, zero elsewhere.
    pub covariance: Mat,
}

/// Fits the unpenalized model restricted to the given support columns and
/// embeds coefficients and covariance back into p dimensions.
pub fn fit_oracle(ds: &SurvivalDataset, index: &RiskIndex, support: &[usize]) -> Result<OracleFit> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let p = ds.p();
    let n = ds.n();
    let restricted_x = {
        let mut data = Vec::with_capacity(n * support.len());
        for i in 0..n {
            let row = ds.covariate_row(i);
            for &j in support {
                data.push(row[j]);
            }
        }
        Mat::from_vec(n, support.len(), data)
    };
    let restricted = SurvivalDataset::from_parts_unchecked(
        ds.times().to_vec(),
        ds.status().to_vec(),
        restricted_x,
    );
    let fit_s = lasso::fit_mple(&restricted, index, 1e-8, 200)?;
    let hess = kernel::hessian(&restricted, index, &fit_s.beta)?;
    let chol = Cholesky::factor(&hess).ok_or(Error::SingularHessian {
        cond: f64::INFINITY,
    })?;
    let s = support.len();
    let mut cov = Mat::zeros(p, p);
    for (col_pos, _) in support.iter().enumerate() {
        let mut e = vec![0.0; s];
        e[col_pos] = 1.0;
        let col = chol.solve(&e);
        for (row_pos, &row_j) in support.iter().enumerate() {
            cov[(row_j, support[col_pos])] = col[row_pos] / n as f64;
        }
    }
    let mut beta = vec![0.0; p];
    for (pos, &j) in support.iter().enumerate() {
        beta[j] = fit_s.beta[pos];
    }
    Ok(OracleFit {
        fit: CoxFit {
            beta,
            lambda: 0.0,
            objective: fit_s.objective,
            iterations: fit_s.iterations,
            converged: fit_s.converged,
            tol: fit_s.tol,
        },
        support: support.to_vec(),
        covariance: cov,
    })
}

/// Per-replication error decomposition against the known truth: the total
/// error of the debiased combination, its asymptotically leading term
/// `-c' Theta score(beta0)`, and the exactly complementary remainder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionDiag {
    pub total: f64,
    pub leading: f64,
    pub remainder: f64,
}

pub fn decompose_error(
    ds: &SurvivalDataset,
    index: &RiskIndex,
    beta0: &[f64],
    beta_hat: &[f64],
    theta: &ThetaHat,
    c: &[f64],
) -> Result<DecompositionDiag> {
    let p = ds.p();
    if beta0.len() != p || beta_hat.len() != p || c.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta0.len().min(beta_hat.len()).min(c.len()),
        });
    }
    let grad_hat = kernel::score(ds, index, beta_hat)?;
    let debiased = inference::debias(beta_hat, theta, &grad_hat)?;
    let total = dot(c, &debiased) - dot(c, beta0);
    let grad0 = kernel::score(ds, index, beta0)?;
    let leading = -dot(c, &theta.matrix.matvec(&grad0));
    Ok(DecompositionDiag {
        total,
        leading,
        remainder: total - leading,
    })
}

fn normal_ci(est: f64, se: f64, alpha: f64) -> (f64, f64) {
    let z = crate::stats::normal_upper_quantile(alpha / 2.0);
    (est - z * se, est + z * se)
}

/// Runs every requested method on one replication.
pub fn run_single_replication(
    cfg: &SimConfig,
    opts: &FitOptions,
    methods: &[Method],
    targets: &[Target],
    joint_targets: &[Vec<usize>],
    alpha: f64,
    replication: u64,
) -> ReplicationRecord {
    let rep_rng = replication_stream(cfg, replication);
    let mut data_rng = rep_rng.child(0);
    let ds = generate_with_stream(cfg, &mut data_rng);
    let index = risk_index(&ds);
    let p = cfg.p;
    let loadings: Vec<Vec<f64>> = targets.iter().map(|t| t.loading(p)).collect();
    let truths: Vec<f64> = targets.iter().map(|t| t.truth(&cfg.beta0)).collect();

    // shared penalized stage, computed at most once
    let mut stage_cache: Option<Result<LassoStage>> = None;
    let mut stage_ref = |ds: &SurvivalDataset, index: &RiskIndex| -> Result<LassoStage> {
        stage_cache
            .get_or_insert_with(|| fit_lasso_stage(ds, index, opts, &rep_rng))
            .clone()
    };

    let mut methods_out = Vec::with_capacity(methods.len());
    for &method in methods {
        let outcome = match method {
            Method::Lasso => stage_ref(&ds, &index).map(|stage| {
                let records = loadings
                    .iter()
                    .map(|c| TargetRecord {
                        estimate: dot(c, &stage.fit.beta),
                        se: None,
                        ci: None,
                        covered: None,
                    })
                    .collect();
                (records, Vec::new())
            }),
            Method::QpDebias => stage_ref(&ds, &index).and_then(|stage| {
                let debias =
                    fit_debias_stage(&ds, &index, opts, stage.lambda, &stage.fit, &rep_rng)?;
                let (debiased, theta) = (&debias.debiased, &debias.theta);
                let mut records = Vec::with_capacity(loadings.len());
                for (c, truth) in loadings.iter().zip(&truths) {
                    let ci = inference::ci_linear(debiased, theta, cfg.n, c, alpha)?;
                    let v = theta.quadratic_form(c);
                    records.push(TargetRecord {
                        estimate: dot(c, debiased),
                        se: Some(libm::sqrt(v / cfg.n as f64)),
                        ci: Some((ci.lower, ci.upper)),
                        covered: Some(ci.contains(*truth)),
                    });
                }
                let mut joints = Vec::with_capacity(joint_targets.len());
                for indices in joint_targets {
                    let mut a = Mat::zeros(indices.len(), p);
                    let mut a0 = Vec::with_capacity(indices.len());
                    for (r, &j) in indices.iter().enumerate() {
                        a[(r, j)] = 1.0;
                        a0.push(cfg.beta0[j]);
                    }
                    let test = inference::chisq_test(debiased, theta, cfg.n, &a, &a0, alpha)?;
                    let mut wald_rejects = Vec::with_capacity(indices.len());
                    for &j in indices {
                        let mut c = vec![0.0; p];
                        c[j] = 1.0;
                        let w =
                            inference::wald_test(debiased, theta, cfg.n, &c, cfg.beta0[j], alpha)?;
                        wald_rejects.push(w.reject);
                    }
                    joints.push(JointRecord {
                        statistic: test.statistic,
                        reject: test.reject,
                        wald_rejects,
                    });
                }
                Ok((records, joints))
            }),
            Method::Mple => lasso::fit_mple(&ds, &index, opts.tol.max(1e-9), 100).and_then(|fit| {
                let hess = kernel::hessian(&ds, &index, &fit.beta)?;
                let chol = Cholesky::factor(&hess).ok_or(Error::SingularHessian {
                    cond: f64::INFINITY,
                })?;
                let records = loadings
                    .iter()
                    .zip(&truths)
                    .map(|(c, truth)| {
                        let hinv_c = chol.solve(c);
                        let v = dot(c, &hinv_c) / cfg.n as f64;
                        let est = dot(c, &fit.beta);
                        let se = libm::sqrt(v.max(0.0));
                        let ci = normal_ci(est, se, alpha);
                        TargetRecord {
                            estimate: est,
                            se: Some(se),
                            ci: Some(ci),
                            covered: Some(ci.0 <= *truth && *truth <= ci.1),
                        }
                    })
                    .collect();
                Ok((records, Vec::new()))
            }),
            Method::Oracle => {
                let support: Vec<usize> = cfg
                    .beta0
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| **b != 0.0)
                    .map(|(j, _)| j)
                    .collect();
                fit_oracle(&ds, &index, &support).map(|oracle| {
                    let records = loadings
                        .iter()
                        .zip(&truths)
                        .map(|(c, truth)| {
                            let v = dot(c, &oracle.covariance.matvec(c));
                            let est = dot(c, &oracle.fit.beta);
                            let se = libm::sqrt(v.max(0.0));
                            let ci = normal_ci(est, se, alpha);
                            TargetRecord {
                                estimate: est,
                                se: Some(se),
                                ci: Some(ci),
                                covered: Some(ci.0 <= *truth && *truth <= ci.1),
                            }
                        })
                        .collect();
                    (records, Vec::new())
                })
            }
        };
        let record = match outcome {
            Ok((targets, joints)) => MethodRecord {
                method,
                targets,
                joints,
                error: None,
            },
            Err(e) => MethodRecord {
                method,
                targets: Vec::new(),
                joints: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        methods_out.push(record);
    }
    ReplicationRecord {
        replication,
        methods: methods_out,
    }
}

/// One replication evaluated at every constraint width of a sweep. The
/// penalized stage, the quadratic-form matrix and its factorization are
/// shared across the grid, so a sweep costs one pipeline plus p row solves
/// per gamma. Produces one record per gamma, each holding a single
/// debiased-method entry.
pub fn run_gamma_sweep_replication(
    cfg: &SimConfig,
    opts: &FitOptions,
    gammas: &[f64],
    targets: &[Target],
    joint_targets: &[Vec<usize>],
    alpha: f64,
    replication: u64,
) -> Vec<ReplicationRecord> {
    let rep_rng = replication_stream(cfg, replication);
    let mut data_rng = rep_rng.child(0);
    let ds = generate_with_stream(cfg, &mut data_rng);
    let index = risk_index(&ds);
    let p = cfg.p;
    let loadings: Vec<Vec<f64>> = targets.iter().map(|t| t.loading(p)).collect();
    let truths: Vec<f64> = targets.iter().map(|t| t.truth(&cfg.beta0)).collect();

    let prep = fit_lasso_stage(&ds, &index, opts, &rep_rng).and_then(|stage| {
        let sigma = kernel::sigma_hat(&ds, &index, &stage.fit.beta)?;
        let solver = theta::ThetaSolver::new(&sigma, opts.qp_tol)?;
        let grad = kernel::score(&ds, &index, &stage.fit.beta)?;
        Ok((stage, solver, grad))
    });
    let (stage, solver, grad) = match prep {
        Ok(parts) => parts,
        Err(e) => {
            let msg = e.to_string();
            return gammas
                .iter()
                .map(|_| ReplicationRecord {
                    replication,
                    methods: vec![MethodRecord {
                        method: Method::QpDebias,
                        targets: Vec::new(),
                        joints: Vec::new(),
                        error: Some(msg.clone()),
                    }],
                })
                .collect();
        }
    };

    gammas
        .iter()
        .map(|&gamma| {
            let outcome = (|| -> Result<(Vec<TargetRecord>, Vec<JointRecord>)> {
                let mut matrix = Mat::zeros(p, p);
                let mut row_kkt = Vec::with_capacity(p);
                for j in 0..p {
                    let (row, diag) = solver.solve_row(j, gamma)?;
                    matrix.row_mut(j).copy_from_slice(&row);
                    row_kkt.push(diag.constraint_residual);
                }
                let theta = ThetaHat {
                    matrix,
                    gamma,
                    ridge: solver.ridge(),
                    row_kkt,
                };
                let debiased = inference::debias(&stage.fit.beta, &theta, &grad)?;
                let mut records = Vec::with_capacity(loadings.len());
                for (c, truth) in loadings.iter().zip(&truths) {
                    let ci = inference::ci_linear(&debiased, &theta, cfg.n, c, alpha)?;
                    let v = theta.quadratic_form(c);
                    records.push(TargetRecord {
                        estimate: dot(c, &debiased),
                        se: Some(libm::sqrt(v / cfg.n as f64)),
                        ci: Some((ci.lower, ci.upper)),
                        covered: Some(ci.contains(*truth)),
                    });
                }
                let mut joints = Vec::with_capacity(joint_targets.len());
                for indices in joint_targets {
                    let mut a = Mat::zeros(indices.len(), p);
                    let mut a0 = Vec::with_capacity(indices.len());
                    for (r, &j) in indices.iter().enumerate() {
                        a[(r, j)] = 1.0;
                        a0.push(cfg.beta0[j]);
                    }
                    let test = inference::chisq_test(&debiased, &theta, cfg.n, &a, &a0, alpha)?;
                    let mut wald_rejects = Vec::with_capacity(indices.len());
                    for &j in indices {
                        let mut c = vec![0.0; p];
                        c[j] = 1.0;
                        let w =
                            inference::wald_test(&debiased, &theta, cfg.n, &c, cfg.beta0[j], alpha)?;
                        wald_rejects.push(w.reject);
                    }
                    joints.push(JointRecord {
                        statistic: test.statistic,
                        reject: test.reject,
                        wald_rejects,
                    });
                }
                Ok((records, joints))
            })();
            let record = match outcome {
                Ok((t, j)) => MethodRecord {
                    method: Method::QpDebias,
                    targets: t,
                    joints: j,
                    error: None,
                },
                Err(e) => MethodRecord {
                    method: Method::QpDebias,
                    targets: Vec::new(),
                    joints: Vec::new(),
                    error: Some(e.to_string()),
                },
            };
            ReplicationRecord {
                replication,
                methods: vec![record],
            }
        })
        .collect()
}

/// Deterministic ordered reduction of replication records.
pub fn aggregate(
    cfg: &SimConfig,
    methods: &[Method],
    targets: &[Target],
    joint_targets: &[Vec<usize>],
    records: &[ReplicationRecord],
) -> SimSummary {
    let mut rows = Vec::new();
    let mut joint_rows = Vec::new();
    let mut failure_reasons: Vec<(String, String, usize)> = Vec::new();
    for &method in methods {
        let per_rep: Vec<&MethodRecord> = records
            .iter()
            .flat_map(|r| r.methods.iter().filter(|m| m.method == method))
            .collect();
        let failures = per_rep.iter().filter(|m| m.error.is_some()).count();
        for m in &per_rep {
            if let Some(reason) = &m.error {
                match failure_reasons
                    .iter_mut()
                    .find(|(meth, r, _)| meth == method.label() && r == reason)
                {
                    Some(entry) => entry.2 += 1,
                    None => {
                        failure_reasons.push((method.label().to_string(), reason.clone(), 1))
                    }
                }
            }
        }
        for (ti, target) in targets.iter().enumerate() {
            let truth = target.truth(&cfg.beta0);
            let mut estimates = Vec::new();
            let mut covered = Vec::new();
            let mut ses = Vec::new();
            for m in &per_rep {
                if m.error.is_some() {
                    continue;
                }
                let rec = &m.targets[ti];
                estimates.push(rec.estimate);
                if let Some(c) = rec.covered {
                    covered.push(c);
                }
                if let Some(se) = rec.se {
                    ses.push(se);
                }
            }
            let used = estimates.len();
            let mean =
                estimates.iter().sum::<f64>() / if used == 0 { 1.0 } else { used as f64 };
            let mse = estimates
                .iter()
                .map(|e| (e - truth) * (e - truth))
                .sum::<f64>()
                / if used == 0 { 1.0 } else { used as f64 };
            rows.push(SummaryRow {
                method: method.label().to_string(),
                target: target.label(),
                truth,
                bias: if used == 0 { f64::NAN } else { mean - truth },
                coverage: if covered.is_empty() {
                    None
                } else {
                    Some(covered.iter().filter(|c| **c).count() as f64 / covered.len() as f64)
                },
                mean_se: if ses.is_empty() {
                    None
                } else {
                    Some(ses.iter().sum::<f64>() / ses.len() as f64)
                },
                mse,
                used,
                failures,
            });
        }
        for (ji, indices) in joint_targets.iter().enumerate() {
            let mut rejects = Vec::new();
            let mut wald_rejects = Vec::new();
            for m in &per_rep {
                if m.error.is_some() || m.joints.len() <= ji {
                    continue;
                }
                rejects.push(m.joints[ji].reject);
                for &w in &m.joints[ji].wald_rejects {
                    wald_rejects.push(w);
                }
            }
            if rejects.is_empty() {
                continue;
            }
            let label = format!(
                "joint[{}]",
                indices
                    .iter()
                    .map(|j| format!("b{}", j + 1))
                    .collect::<Vec<_>>()
                    .join(",")
            );
            joint_rows.push(JointSummaryRow {
                method: method.label().to_string(),
                target: label,
                rejection_rate: rejects.iter().filter(|r| **r).count() as f64
                    / rejects.len() as f64,
                wald_rejection_rate: if wald_rejects.is_empty() {
                    0.0
                } else {
                    wald_rejects.iter().filter(|r| **r).count() as f64 / wald_rejects.len() as f64
                },
                used: rejects.len(),
                failures,
            });
        }
    }
    SimSummary {
        replications: records.len(),
        rows,
        joint_rows,
        failure_reasons,
    }
}

/// Sequential replication driver; the companion crate provides a
/// thread-parallel driver that produces the identical summary.
#[allow(clippy::too_many_arguments)]
pub fn run_replications(
    cfg: &SimConfig,
    opts: &FitOptions,
    methods: &[Method],
    replications: usize,
    targets: &[Target],
    joint_targets: &[Vec<usize>],
    alpha: f64,
) -> Result<SimSummary> {
    cfg.validate()?;
    let records: Vec<ReplicationRecord> = (0..replications as u64)
        .map(|r| run_single_replication(cfg, opts, methods, targets, joint_targets, alpha, r))
        .collect();
    Ok(aggregate(cfg, methods, targets, joint_targets, &records))
}
