//! Experiment layer behind the `memsgd` binary: configuration, run
//! orchestration and metrics files.

mod check;
mod commands;
pub mod config;
pub mod metrics;

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use check::{cmd_check, CheckOptions, SuiteResult, SUITES};
pub use commands::{
    cmd_compare, cmd_run, cmd_tune_gamma0, dataset_info, execute, variance_report, write_report, CompareReport,
    DatasetInfo, RunReport, TuneReport, TuneRow, VarianceReport,
};
pub use config::{AveragingSpec, Ini, ProblemSpec, RunConfig, ScheduleSpec, ShiftSpec};

use crate::compression::CompressionError;
use crate::data::{make_quadratic_sized, make_synthetic_logistic, read_libsvm_file, DataError, ParseOptions};
use crate::objective::{Objective, ObjectiveError};
use crate::optimizer::OptimError;
use crate::parallel::ParallelError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },
    #[error("{}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Parallel(#[from] ParallelError),
    #[error("compare needs at least two configs, got {0}")]
    TooFewConfigs(usize),
    #[error("configs describe different problems: `{first}` vs `{other}`")]
    MismatchedProblems { first: String, other: String },
    #[error("duplicate run label `{0}`")]
    DuplicateLabel(String),
    #[error("gamma0 grid is empty")]
    EmptyGrid,
    #[error("every gamma0 in the grid diverged: {0:?}")]
    AllDiverged(Vec<f64>),
    #[error("{0}")]
    Usage(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            msg: err.to_string(),
        }
    }
}

/// A loaded objective with what is known about its optimum.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: Objective,
    pub optimum_value: Option<f64>,
    pub summary: ProblemSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub kind: &'static str,
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    pub optimum_value: Option<f64>,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem, HarnessError> {
        let (objective, optimum_value) = match self {
            ProblemSpec::Libsvm {
                path,
                lambda,
                zero_one_labels,
                dim,
            } => {
                let opts = ParseOptions {
                    zero_one_labels: *zero_one_labels,
                    dim: *dim,
                };
                let ds = read_libsvm_file(path, &opts)?;
                if ds.n() == 0 {
                    return Err(HarnessError::Config {
                        line: None,
                        msg: format!("{} has no rows", path.display()),
                    });
                }
                let lambda = lambda.unwrap_or(1.0 / ds.n() as f64);
                (Objective::logistic(Arc::new(ds), lambda), None)
            }
            ProblemSpec::SyntheticLogistic { n, d, density, seed } => {
                let p = make_synthetic_logistic(*n, *d, *density, *seed);
                (p.objective, p.optimum_value)
            }
            ProblemSpec::Quadratic { n, d, mu, l, seed } => {
                let p = make_quadratic_sized(*n, *d, *mu, *l, *seed);
                (p.objective, p.optimum_value)
            }
        };
        let summary = ProblemSummary {
            kind: objective.kind(),
            n: objective.n(),
            d: objective.dim(),
            mu: objective.mu(),
            optimum_value,
        };
        Ok(Problem {
            objective,
            optimum_value,
            summary,
        })
    }
}
