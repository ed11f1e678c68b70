//! Simulated against closed-form trajectories on one random task.

use std::time::Instant;

use lindyn::analysis::{self, ComparisonReport};
use lindyn::exact;
use lindyn::init::BalanceReport;
use lindyn::simulator::{self, Trajectory};
use lindyn::tasks;
use serde::Serialize;

use super::{over_lambdas, task_for, Arch};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{Artifact, QqtSnapshots, TrajectoryTable};
use crate::RunError;

pub struct Settings {
    pub arch: Arch,
    pub samples: usize,
}

impl Settings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        super::init_scale(cfg, 1.0)?;
        super::init_scale(cfg, 0.0)?;
        cfg.param_f64("sigma_y")?;
        Ok(Settings { arch: cfg.dims, samples: cfg.param_usize("samples")? })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaComparison {
    pub lambda: f64,
    /// Max-abs errors over the run.
    pub loss_err: f64,
    pub function_err: f64,
    pub w1tw1_err: f64,
    pub w2w2t_err: f64,
    pub ntk_trace_err: f64,
    /// `ntk_trace_err / P`, the kernel of the per-sample mean loss.
    pub ntk_trace_err_per_sample: f64,
    pub balance_drift: f64,
    pub qqt: ComparisonReport,
    #[serde(skip)]
    pub runtime_s: f64,
    #[serde(skip)]
    pub sim: Trajectory,
    #[serde(skip)]
    pub exact: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub arch: Arch,
    /// Largest `QQᵀ` entry error over all λ.
    pub max_abs_err: f64,
    pub per_lambda: Vec<LambdaComparison>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    let s = Settings::parse(cfg)?;
    let task = task_for(cfg, s.arch, 0)?;
    let stats = tasks::compute_statistics(&task);
    let svd = tasks::task_svd(&stats)?;
    let tc = cfg.train_config();
    let per_lambda = over_lambdas(&cfg.lambda_list, |lambda| {
        let start = Instant::now();
        let p0 = super::init_for(cfg, lambda, s.arch, 0)?;
        let (p1, sim) = simulator::train_on_stats(&p0, &stats, &tc)?;
        let ctx = exact::build_context(&svd, &p0, lambda, tc.tau)?;
        let mut ex = exact::exact_trajectory(&ctx, &stats, &sim.times)?;
        ex.steps = sim.steps.clone();
        let runtime_s = start.elapsed().as_secs_f64();
        let qqt = analysis::compare_trajectories(&sim, &ex)?;
        let max_diff = |f: &dyn Fn(&Trajectory, usize) -> f64| -> f64 {
            (0..sim.len()).map(|k| (f(&sim, k) - f(&ex, k)).abs()).fold(0.0, f64::max)
        };
        let loss_err = max_diff(&|t, k| t.losses[k]);
        let ntk_trace_err = max_diff(&|t, k| analysis::ntk_trace_whitened(&t.qqt[k], s.samples));
        Ok(LambdaComparison {
            lambda,
            loss_err,
            function_err: qqt.per_block_err[2],
            w1tw1_err: qqt.per_block_err[0],
            w2w2t_err: qqt.per_block_err[3],
            ntk_trace_err,
            ntk_trace_err_per_sample: ntk_trace_err / s.samples as f64,
            balance_drift: BalanceReport::new(&p1).deviation_from(lambda),
            qqt,
            runtime_s,
            sim,
            exact: ex,
        })
    })?;
    let max_abs_err = per_lambda.iter().map(|c| c.qqt.max_abs_err).fold(0.0, f64::max);
    Ok(Report { arch: s.arch, max_abs_err, per_lambda })
}

impl Report {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let arch = self.arch;
        let mut sim = TrajectoryTable::new();
        let mut ex = TrajectoryTable::new();
        let mut snaps = Vec::new();
        for c in &self.per_lambda {
            sim.push("sim", &c.sim, c.lambda, arch);
            ex.push("exact", &c.exact, c.lambda, arch);
            snaps.push(QqtSnapshots::new("sim", &c.sim, c.lambda, arch));
            snaps.push(QqtSnapshots::new("exact", &c.exact, c.lambda, arch));
        }
        vec![
            sim.artifact("sim.csv"),
            ex.artifact("exact.csv"),
            Artifact::json("comparison.json", self),
            Artifact::json("qqt.json", &snaps),
        ]
    }
}
