//! Reproducible experiment driver for `itkrm`.
//!
//! An [`ExperimentSpec`] describes one experiment (scenario, model, engine and
//! adaptation parameters, number of trials). [`run_experiment`] runs its
//! trials in parallel and writes a manifest, per-trial CSVs, aggregate CSVs
//! and the final dictionaries into the output directory.

pub mod eval;
pub mod run;
pub mod spec;

pub use eval::{run_eval, EvalArgs};
pub use run::{run_experiment, Manifest};
pub use spec::{parse_spec, parse_spec_for, ExperimentSpec, Family, Scenario, SpecInput};

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "ITKRM_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid value for `{field}`: {reason}")]
    Spec { field: String, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    /// 2 for specification errors, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Spec { .. } | CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<itkrm::Error> for CliError {
    fn from(e: itkrm::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// Configures the global worker pool from [`WORKERS_ENV`], if set.
pub fn init_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Spec {
        field: WORKERS_ENV.to_string(),
        reason: format!("{value:?} is not a positive integer"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}
