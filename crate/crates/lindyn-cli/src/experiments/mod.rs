//! One module per experiment. Each exposes `run(cfg) -> Report`, with the
//! numbers the acceptance checks read, and `Report::artifacts`.

pub mod audit;
pub mod compare;
pub mod ntk;
pub mod protocols;
pub mod representations;
pub mod singulars;

use lindyn::init::{self, NetworkParams};
use lindyn::tasks::{self, TaskData};

use crate::config::{ConfigError, Experiment, ExperimentConfig, TaskChoice};
use crate::output::{sub_seed, Artifact};
use crate::RunError;

pub type Arch = (usize, usize, usize);

/// The task of sub-run `trial` for architecture `arch`.
pub fn task_for(cfg: &ExperimentConfig, arch: Arch, trial: u64) -> Result<TaskData, RunError> {
    match cfg.task {
        TaskChoice::Hierarchy => {
            if (arch.0, arch.2) != (8, 8) {
                return Err(ConfigError::Field {
                    field: "dims".into(),
                    message: "the hierarchy task maps 8 items to 8 features".into(),
                }
                .into());
            }
            Ok(tasks::make_semantic_hierarchy())
        }
        TaskChoice::Random => Ok(tasks::make_random_regression(
            arch.0,
            arch.2,
            cfg.param_usize("samples")?,
            cfg.param_f64("sigma_y")?,
            sub_seed(cfg.seed, "task", 0.0, arch, trial),
        )?),
    }
}

/// Gaussian scale of the initial draw; `init_scale_zero` overrides it at λ = 0.
pub fn init_scale(cfg: &ExperimentConfig, lambda: f64) -> Result<f64, ConfigError> {
    if lambda == 0.0 && cfg.task_params.contains_key("init_scale_zero") {
        cfg.param_f64("init_scale_zero")
    } else {
        cfg.param_f64("init_scale")
    }
}

pub fn init_for(cfg: &ExperimentConfig, lambda: f64, arch: Arch, trial: u64) -> Result<NetworkParams, RunError> {
    Ok(init::lambda_balanced_init(
        lambda,
        arch.0,
        arch.1,
        arch.2,
        init_scale(cfg, lambda)?,
        sub_seed(cfg.seed, "init", lambda, arch, trial),
    )?)
}

/// Parses every setting the experiment reads, so `validate` can report bad
/// values before anything runs.
pub fn check_params(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    match cfg.experiment {
        Experiment::Compare => compare::Settings::parse(cfg).map(drop),
        Experiment::Singulars => singulars::Settings::parse(cfg).map(drop),
        Experiment::Representations => representations::Settings::parse(cfg).map(drop),
        Experiment::NtkSweep => ntk::SweepSettings::parse(cfg).map(drop),
        Experiment::PhaseMap => ntk::PhaseSettings::parse(cfg).map(drop),
        Experiment::Continual => protocols::ContinualSettings::parse(cfg).map(drop),
        Experiment::Reversal => protocols::ReversalSettings::parse(cfg).map(drop),
        Experiment::Transfer => protocols::TransferSettings::parse(cfg).map(drop),
        Experiment::Finetune => protocols::FinetuneSettings::parse(cfg).map(drop),
        Experiment::InitAudit => audit::AuditSettings::parse(cfg).map(drop),
        Experiment::Noise => audit::NoiseSettings::parse(cfg).map(drop),
    }
}

/// Runs the experiment named in `cfg` and returns its artifacts.
pub fn compute(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    Ok(match cfg.experiment {
        Experiment::Compare => compare::run(cfg)?.artifacts(),
        Experiment::Singulars => singulars::run(cfg)?.artifacts(),
        Experiment::Representations => representations::run(cfg)?.artifacts(),
        Experiment::NtkSweep => ntk::run_sweep(cfg)?.artifacts(),
        Experiment::PhaseMap => ntk::run_phase_map(cfg)?.artifacts(),
        Experiment::Continual => protocols::run_continual(cfg)?.artifacts(),
        Experiment::Reversal => protocols::run_reversal(cfg)?.artifacts(),
        Experiment::Transfer => protocols::run_transfer(cfg)?.artifacts(),
        Experiment::Finetune => protocols::run_finetune(cfg)?.artifacts(),
        Experiment::InitAudit => audit::run_audit(cfg)?.artifacts(),
        Experiment::Noise => audit::run_noise(cfg)?.artifacts(),
    })
}

/// Runs `f` over the λ list in parallel, keeping the list order.
pub fn over_lambdas<R, F>(lambdas: &[f64], f: F) -> Result<Vec<R>, RunError>
where
    R: Send,
    F: Fn(f64) -> Result<R, RunError> + Sync + Send,
{
    lindyn::par::map(lambdas.to_vec(), f).into_iter().collect()
}
