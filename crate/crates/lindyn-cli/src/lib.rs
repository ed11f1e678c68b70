//! Experiment runner for `lindyn`: configuration, one module per experiment
//! protocol, and reproducible CSV/JSON artifacts.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

pub use config::{validate, ConfigError, Diagnostic, Experiment, ExperimentConfig, Severity, TaskChoice};
pub use output::RunManifest;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration rejected ({} diagnostics)", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] lindyn::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl RunError {
    /// 2 for configurations the run refuses, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use lindyn::Error as E;
        match self {
            RunError::Invalid(_) | RunError::Config(_) => 2,
            RunError::Numerical(
                E::Dimension(_)
                | E::Sign(_)
                | E::Bottleneck { .. }
                | E::MissingAlphas(_)
                | E::UnexpectedAlphas(_)
                | E::IndexOutOfRange { .. }
                | E::Precondition(_),
            ) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io { .. } => 1,
        }
    }
}

/// Validates, runs the experiment and writes its artifacts and manifest into
/// `config.output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    let diags = validate(config);
    if !diags.is_empty() {
        return Err(RunError::Invalid(diags));
    }
    let start = Instant::now();
    let artifacts = experiments::compute(config)?;
    output::write_run(&config.output_dir, config, &artifacts, start.elapsed().as_secs_f64())
}

/// Directory the manifest of `config` is written to.
pub fn manifest_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(output::MANIFEST)
}
