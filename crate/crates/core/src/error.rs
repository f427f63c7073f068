use alloc::boxed::Box;
use alloc::string::String;

use crate::data::ValidationReport;

/// Errors surfaced by estimation, solving and simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dataset validation failed: {0}")]
    Validation(ValidationReport),
    #[error("column {col} is constant; z-score standardization is undefined")]
    ConstantColumn { col: usize },
    #[error("risk set at t = {t} is empty")]
    EmptyRiskSet { t: f64 },
    #[error("linear predictor is non-finite at row {row}")]
    NonFiniteLinearPredictor { row: usize },
    #[error("objective became non-finite")]
    NonFiniteObjective,
    #[error("hessian is numerically singular (condition estimate {cond:e})")]
    SingularHessian { cond: f64 },
    #[error("partial likelihood appears monotone: |beta| exceeded {bound}")]
    MonotoneLikelihood { bound: f64 },
    #[error("training data for fold {fold} contains no events")]
    FoldWithoutEvents { fold: usize },
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("active-set change limit of {limit} exceeded")]
    MaxActiveSetChanges { limit: usize },
    #[error("inverse-information row {row}: {source}")]
    ThetaRow { row: usize, source: Box<Error> },
    #[error("theta diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variance estimate {value} is not positive")]
    NonPositiveVariance { value: f64 },
    #[error("loading matrix does not have full row rank")]
    RankDeficientA,
    #[error("covariance of the loading combinations failed the positive-definiteness check")]
    NonPdF,
    #[error("oracle support set is empty")]
    EmptySupport,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Wraps an error with the index of the inverse-information row that
    /// produced it.
    pub fn for_theta_row(self, row: usize) -> Self {
        Error::ThetaRow {
            row,
            source: Box::new(self),
        }
    }
}
