//! Converged hidden representations against their λ-dependent limits.

use lindyn::analysis;
use lindyn::exact;
use lindyn::linalg::{self, Mat};
use lindyn::simulator::{self, Trajectory};
use lindyn::tasks;
use serde::Serialize;

use super::{over_lambdas, task_for, Arch};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{Artifact, QqtSnapshots, TrajectoryTable};
use crate::RunError;

pub struct Settings {
    pub arch: Arch,
}

impl Settings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        super::init_scale(cfg, 1.0)?;
        super::init_scale(cfg, 0.0)?;
        Ok(Settings { arch: cfg.dims })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRepresentation {
    pub lambda: f64,
    /// Max-abs error of the final `W1ᵀW1` and `W2W2ᵀ` against `ṼS1²Ṽᵀ`, `ŨS2²Ũᵀ`.
    pub w1tw1_err: f64,
    pub w2w2t_err: f64,
    /// Max-abs distance of the larger block from `|λ|ŨŨᵀ` (λ > 0) or
    /// `|λ|ṼṼᵀ` (λ < 0); absent at λ = 0.
    pub large_side_dev: Option<f64>,
    pub w1tw1: Vec<Vec<f64>>,
    pub w2w2t: Vec<Vec<f64>>,
    pub rsm_input: Vec<Vec<f64>>,
    pub rsm_output: Vec<Vec<f64>>,
    #[serde(skip)]
    pub sim: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub arch: Arch,
    pub per_lambda: Vec<LambdaRepresentation>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    let s = Settings::parse(cfg)?;
    let task = task_for(cfg, s.arch, 0)?;
    let stats = tasks::compute_statistics(&task);
    let svd = tasks::task_svd(&stats)?;
    let tc = cfg.train_config();
    let per_lambda = over_lambdas(&cfg.lambda_list, |lambda| {
        let p0 = super::init_for(cfg, lambda, s.arch, 0)?;
        let (_, sim) = simulator::train_on_stats(&p0, &stats, &tc)?;
        let q = sim.qqt.last().expect("a run records at least one step").clone();
        let limit = exact::limit_qqt(&svd, lambda);
        let (a, b) = (q.w1tw1(), q.w2w2t());
        let large_side_dev = if lambda == 0.0 {
            None
        } else {
            let (asym_w1, asym_w2) = exact::asymptotic_representation(&svd, lambda)?;
            Some(if lambda > 0.0 {
                linalg::max_abs_diff(&b, &asym_w2)
            } else {
                linalg::max_abs_diff(&a, &asym_w1)
            })
        };
        let rows = |m: &Mat| linalg::to_row_major(m);
        Ok(LambdaRepresentation {
            lambda,
            w1tw1_err: linalg::max_abs_diff(&a, &limit.w1tw1()),
            w2w2t_err: linalg::max_abs_diff(&b, &limit.w2w2t()),
            large_side_dev,
            w1tw1: rows(&a),
            w2w2t: rows(&b),
            rsm_input: rows(&analysis::rsm_input(&q, &task.x)?),
            rsm_output: rows(&analysis::rsm_output(&q, &task.y)?),
            sim,
        })
    })?;
    Ok(Report { arch: s.arch, per_lambda })
}

impl Report {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut table = TrajectoryTable::new();
        let mut snaps = Vec::new();
        for l in &self.per_lambda {
            table.push("sim", &l.sim, l.lambda, self.arch);
            snaps.push(QqtSnapshots::new("sim", &l.sim, l.lambda, self.arch));
        }
        vec![
            table.artifact("trajectories.csv"),
            Artifact::json("representations.json", self),
            Artifact::json("qqt.json", &snaps),
        ]
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
