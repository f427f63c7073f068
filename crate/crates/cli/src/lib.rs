//! IO, file formats, configuration and parallel drivers around the core
//! estimation library: CSV ingestion, JSON/CSV emission with run manifests,
//! TOML scenario configs, contrast parsing, a thread-parallel replication
//! runner and the timing harness for the inverse-information solver.

pub mod bench;
pub mod config;
pub mod contrast;
pub mod csvio;
pub mod manifest;
pub mod output;
pub mod runner;

use std::fmt;

/// CLI-level errors with their process exit codes: 2 for parse problems,
/// 3 for data/config validation, 4 for estimation failures, 5 for
/// quadratic-programming failures.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Qp(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Qp(_) => 5,
            CliError::Io(_) => 2,
        }
    }
}

/// Maps a core error onto the CLI failure classes.
pub fn classify_core_error(e: coxdebias_core::Error) -> CliError {
    use coxdebias_core::Error as E;
    match e {
        E::Validation(_) | E::ConstantColumn { .. } | E::InvalidConfig(_) => {
            CliError::Validation(e.to_string())
        }
        E::Infeasible
        | E::NotPositiveDefinite
        | E::MaxActiveSetChanges { .. }
        | E::ThetaRow { .. }
        | E::NonPositiveDiagonal { .. } => CliError::Qp(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Stage timings recorded into the manifest.
#[derive(Debug, Default, Clone)]
pub struct StageClock {
    stages: Vec<(String, f64)>,
}

impl StageClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.stages
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn stages(&self) -> &[(String, f64)] {
        &self.stages
    }
}

impl fmt::Display for StageClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, secs) in &self.stages {
            writeln!(f, "{name}: {secs:.3}s")?;
        }
        Ok(())
    }
}
