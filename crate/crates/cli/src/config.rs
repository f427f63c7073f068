//! TOML scenario configuration for `simulate`: the generative model, the
//! methods and targets to evaluate, and the fitting options.

use coxdebias_core::lasso::CvLoss;
use coxdebias_core::sim::{
    beta0_spaced, Censoring, CovStructure, FitOptions, GammaRule, LambdaRule, Method, SimConfig,
    Target,
};
use coxdebias_core::theta::ThresholdDenominator;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// Number or the string "cv".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleSpec {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub n: usize,
    pub p: usize,
    /// Explicit coefficient vector.
    pub beta0: Option<Vec<f64>>,
    /// First coefficient of the spaced sparse layout.
    pub beta1: Option<f64>,
    /// Sparse 1-based (index, value) entries; everything else is zero.
    pub beta_nonzero: Option<Vec<BetaEntry>>,
    pub cov: String,
    pub rho: Option<f64>,
    pub truncation: Option<f64>,
    pub censoring: String,
    pub kappa: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaEntry {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub replications: usize,
    pub methods: Vec<String>,
    /// 1-based coordinate targets.
    #[serde(default)]
    pub targets: Vec<usize>,
    /// 1-based coordinate groups tested jointly.
    #[serde(default)]
    pub joint: Vec<Vec<usize>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Absolute gamma values swept one summary per value.
    #[serde(default)]
    pub gamma_sweep: Option<GammaSweep>,
    /// Error-decomposition diagnostic on the given 1-based coordinate.
    #[serde(default)]
    pub decompose_target: Option<usize>,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSweep {
    /// The default grid of multipliers of sqrt(log(p)/n).
    Named(String),
    /// Explicit absolute gamma values.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub lambda: Option<RuleSpec>,
    pub lambda_folds: Option<usize>,
    pub lambda_grid_count: Option<usize>,
    pub lambda_grid_ratio: Option<f64>,
    pub cv_loss: Option<String>,
    pub gamma: Option<RuleSpec>,
    pub gamma_folds: Option<usize>,
    pub threshold_alpha: Option<f64>,
    pub threshold_denominator: Option<String>,
    pub gamma_grid: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

/// Whole config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub scenario: ScenarioSection,
    pub run: RunSection,
    #[serde(default)]
    pub fit: FitSection,
}

/// Fully resolved simulation plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimPlan {
    pub config: SimConfig,
    pub options: FitOptions,
    pub methods: Vec<Method>,
    pub targets: Vec<Target>,
    pub joint_targets: Vec<Vec<usize>>,
    pub alpha: f64,
    pub replications: usize,
    pub gamma_sweep: Option<Vec<f64>>,
    pub decompose_target: Option<usize>,
}

pub fn parse_sim_file(text: &str) -> CliResult<SimPlan> {
    let file: SimFile =
        toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))?;
    resolve(file)
}

pub fn resolve(file: SimFile) -> CliResult<SimPlan> {
    let s = &file.scenario;
    let beta_specs =
        usize::from(s.beta0.is_some()) + usize::from(s.beta1.is_some()) + usize::from(s.beta_nonzero.is_some());
    if beta_specs != 1 {
        return Err(CliError::Parse(
            "scenario needs exactly one of beta0, beta1 or beta_nonzero".into(),
        ));
    }
    let beta0 = if let Some(b) = &s.beta0 {
        if b.len() != s.p {
            return Err(CliError::Validation(format!(
                "beta0 length {} != p = {}",
                b.len(),
                s.p
            )));
        }
        b.clone()
    } else if let Some(b1) = s.beta1 {
        beta0_spaced(s.p, b1)
    } else {
        let mut beta = vec![0.0; s.p];
        for entry in s.beta_nonzero.as_ref().unwrap() {
            if entry.index == 0 || entry.index > s.p {
                return Err(CliError::Validation(format!(
                    "beta_nonzero index {} outside 1..={}",
                    entry.index, s.p
                )));
            }
            beta[entry.index - 1] = entry.value;
        }
        beta
    };
    let cov = match s.cov.as_str() {
        "independent" => CovStructure::Independent,
        "ar1" => CovStructure::Ar1 {
            rho: s.rho.ok_or_else(|| {
                CliError::Parse("cov = \"ar1\" requires rho".into())
            })?,
        },
        other => {
            return Err(CliError::Parse(format!(
                "unknown cov `{other}` (independent | ar1)"
            )))
        }
    };
    let censoring = match s.censoring.as_str() {
        "exponential" => Censoring::Exponential {
            kappa: s
                .kappa
                .ok_or_else(|| CliError::Parse("censoring = \"exponential\" requires kappa".into()))?,
        },
        "uniform" => Censoring::Uniform {
            low: s
                .low
                .ok_or_else(|| CliError::Parse("censoring = \"uniform\" requires low".into()))?,
            high: s
                .high
                .ok_or_else(|| CliError::Parse("censoring = \"uniform\" requires high".into()))?,
        },
        other => {
            return Err(CliError::Parse(format!(
                "unknown censoring `{other}` (exponential | uniform)"
            )))
        }
    };
    let config = SimConfig {
        n: s.n,
        p: s.p,
        beta0,
        cov,
        truncation: s.truncation,
        censoring,
        seed: s.seed,
    };
    config
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let mut options = FitOptions::default();
    let f = &file.fit;
    if let Some(rule) = &f.lambda {
        options.lambda = parse_lambda_rule(rule)?;
    }
    if let Some(v) = f.lambda_folds {
        options.lambda_folds = v;
    }
    if let Some(v) = f.lambda_grid_count {
        options.lambda_grid_count = v;
    }
    if let Some(v) = f.lambda_grid_ratio {
        options.lambda_grid_ratio = v;
    }
    if let Some(loss) = &f.cv_loss {
        options.cv_loss = match loss.as_str() {
            "held-out" => CvLoss::HeldOut,
            "vvh" => CvLoss::VerweijVanHouwelingen,
            other => {
                return Err(CliError::Parse(format!(
                    "unknown cv_loss `{other}` (held-out | vvh)"
                )))
            }
        };
    }
    if let Some(rule) = &f.gamma {
        options.gamma = parse_gamma_rule(rule)?;
    }
    if let Some(v) = f.gamma_folds {
        options.gamma_folds = v;
    }
    if let Some(v) = f.threshold_alpha {
        options.threshold_alpha = v;
    }
    if let Some(d) = &f.threshold_denominator {
        options.threshold_denominator = parse_denominator(d)?;
    }
    if let Some(g) = &f.gamma_grid {
        options.gamma_grid = Some(g.clone());
    }
    if let Some(v) = f.tol {
        options.tol = v;
    }
    if let Some(v) = f.max_iter {
        options.max_iter = v;
    }

    let methods = file
        .run
        .methods
        .iter()
        .map(|m| parse_method(m))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(CliError::Validation("run.methods is empty".into()));
    }
    let targets: Vec<Target> = file
        .run
        .targets
        .iter()
        .map(|&one_based| {
            if one_based == 0 || one_based > config.p {
                Err(CliError::Validation(format!(
                    "target {one_based} outside 1..={}",
                    config.p
                )))
            } else {
                Ok(Target::Coordinate {
                    index: one_based - 1,
                })
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let joint_targets: Vec<Vec<usize>> = file
        .run
        .joint
        .iter()
        .map(|group| {
            group
                .iter()
                .map(|&one_based| {
                    if one_based == 0 || one_based > config.p {
                        Err(CliError::Validation(format!(
                            "joint target {one_based} outside 1..={}",
                            config.p
                        )))
                    } else {
                        Ok(one_based - 1)
                    }
                })
                .collect()
        })
        .collect::<CliResult<Vec<_>>>()?;
    let gamma_sweep = match &file.run.gamma_sweep {
        None => None,
        Some(GammaSweep::Values(v)) => Some(v.clone()),
        Some(GammaSweep::Named(name)) if name == "default" => Some(
            coxdebias_core::theta::default_gamma_grid(config.p, config.n),
        ),
        Some(GammaSweep::Named(other)) => {
            return Err(CliError::Parse(format!(
                "unknown gamma_sweep `{other}` (\"default\" or a list of values)"
            )))
        }
    };
    let decompose_target = match file.run.decompose_target {
        None => None,
        Some(one_based) if one_based >= 1 && one_based <= config.p => Some(one_based - 1),
        Some(bad) => {
            return Err(CliError::Validation(format!(
                "decompose_target {bad} outside 1..={}",
                config.p
            )))
        }
    };
    Ok(SimPlan {
        config,
        options,
        methods,
        targets,
        joint_targets,
        alpha: file.run.alpha,
        replications: file.run.replications,
        gamma_sweep,
        decompose_target,
    })
}

pub fn parse_method(name: &str) -> CliResult<Method> {
    match name {
        "qp_debias" => Ok(Method::QpDebias),
        "lasso" => Ok(Method::Lasso),
        "mple" => Ok(Method::Mple),
        "oracle" => Ok(Method::Oracle),
        other => Err(CliError::Parse(format!(
            "unknown method `{other}` (qp_debias | lasso | mple | oracle)"
        ))),
    }
}

pub fn parse_lambda_rule(rule: &RuleSpec) -> CliResult<LambdaRule> {
    match rule {
        RuleSpec::Value(v) if *v >= 0.0 => Ok(LambdaRule::Fixed { value: *v }),
        RuleSpec::Value(v) => Err(CliError::Parse(format!("lambda = {v} must be nonnegative"))),
        RuleSpec::Named(s) if s == "cv" => Ok(LambdaRule::Cv),
        RuleSpec::Named(s) => Err(CliError::Parse(format!("unknown lambda rule `{s}`"))),
    }
}

pub fn parse_gamma_rule(rule: &RuleSpec) -> CliResult<GammaRule> {
    match rule {
        RuleSpec::Value(v) if *v >= 0.0 => Ok(GammaRule::Fixed { value: *v }),
        RuleSpec::Value(v) => Err(CliError::Parse(format!("gamma = {v} must be nonnegative"))),
        RuleSpec::Named(s) if s == "cv" => Ok(GammaRule::Cv),
        RuleSpec::Named(s) => Err(CliError::Parse(format!("unknown gamma rule `{s}`"))),
    }
}

pub fn parse_denominator(name: &str) -> CliResult<ThresholdDenominator> {
    match name {
        "sqrt-diag" => Ok(ThresholdDenominator::SqrtDiag),
        "diag" => Ok(ThresholdDenominator::Diag),
        other => Err(CliError::Parse(format!(
            "unknown threshold denominator `{other}` (sqrt-diag | diag)"
        ))),
    }
}

/// Embedded scenario presets.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "tuning_sweep" => Some(include_str!("../presets/tuning_sweep.toml")),
        "independent_p100" => Some(include_str!("../presets/independent_p100.toml")),
        "independent_p50" => Some(include_str!("../presets/independent_p50.toml")),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["tuning_sweep", "independent_p100", "independent_p50"]
}
