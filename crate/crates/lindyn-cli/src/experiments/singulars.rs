//! Singular values of a task-aligned network against the transition
//! function and its sigmoidal and exponential limits.

use lindyn::exact::{self, Regime, TransitionParams};
use lindyn::linalg;
use lindyn::simulator::{self, Trajectory};
use lindyn::tasks;
use serde::Serialize;

use super::{over_lambdas, task_for, Arch};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{sub_seed, Artifact, TrajectoryTable};
use crate::RunError;

pub struct Settings {
    pub arch: Arch,
    pub init_scale: f64,
}

impl Settings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.param_usize("samples")?;
        cfg.param_f64("sigma_y")?;
        Ok(Settings { arch: cfg.dims, init_scale: cfg.param_f64("init_scale")? })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaSingulars {
    pub lambda: f64,
    pub s0: Vec<f64>,
    /// Max over modes and recorded times of |simulated − predicted|.
    pub sim_vs_theory: f64,
    /// Sup of |γ − sigmoidal limit| over modes and times.
    pub sigmoid_err: f64,
    /// Sup of |γ − (1 − e^{−|λ|t})|.
    pub exponential_err: f64,
    /// The same sup for the simulated fraction `(s(t) − s0)/(s̃ − s0)`.
    pub sim_exponential_err: f64,
    #[serde(skip)]
    pub sim: Trajectory,
    #[serde(skip)]
    pub theory: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub arch: Arch,
    pub s_target: Vec<f64>,
    pub per_lambda: Vec<LambdaSingulars>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    let s = Settings::parse(cfg)?;
    let (ni, nh, no) = s.arch;
    let task = task_for(cfg, s.arch, 0)?;
    let stats = tasks::compute_statistics(&task);
    let svd = tasks::task_svd(&stats)?;
    let m = ni.min(no);
    if svd.rank() < m {
        return Err(lindyn::Error::RankDeficient(svd.s.last().copied().unwrap_or(0.0)).into());
    }
    // The same draw for every λ: the singular values of a Gaussian pair product.
    let mut rng = linalg::rng(sub_seed(cfg.seed, "init", 0.0, s.arch, 0));
    let w1 = linalg::randn(nh, ni, &mut rng) * s.init_scale;
    let w2 = linalg::randn(no, nh, &mut rng) * s.init_scale;
    let s0: Vec<f64> = linalg::svd(&(w2 * w1)).s[..m].to_vec();
    let r = linalg::random_orthogonal(nh, &mut rng);
    let tc = cfg.train_config();
    let floor = stats.loss_floor();
    let per_lambda = over_lambdas(&cfg.lambda_list, |lambda| {
        let p0 = exact::task_aligned_init(&svd, &s0, lambda, &r)?;
        let (_, sim) = simulator::train_on_stats(&p0, &stats, &tc)?;
        let params: Vec<TransitionParams> = (0..m)
            .map(|i| TransitionParams { s0: s0[i], s_target: svd.s[i], lambda, tau: tc.tau })
            .collect();
        let mut theory = Trajectory::default();
        let (mut sim_err, mut sig_err, mut exp_err, mut sim_exp_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (k, &t) in sim.times.iter().enumerate() {
            let pred: Vec<f64> = params.iter().map(|p| exact::singular_value_at(p, t)).collect();
            let mut sorted = pred.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in sim.network_svals[k].iter().zip(&sorted) {
                sim_err = sim_err.max((a - b).abs());
            }
            for (i, p) in params.iter().enumerate() {
                let g = exact::transition_gamma(p, t);
                sig_err = sig_err.max((g - exact::transition_limit(p, t, Regime::Sigmoidal)?).abs());
                let lim = exact::transition_limit(p, t, Regime::Exponential)?;
                exp_err = exp_err.max((g - lim).abs());
                let g_sim = (sim.network_svals[k][i] - p.s0) / (p.s_target - p.s0);
                sim_exp_err = sim_exp_err.max((g_sim - lim).abs());
            }
            let loss = 0.5 * pred.iter().zip(&svd.s).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + floor;
            theory.steps.push(sim.steps[k]);
            theory.times.push(t);
            theory.losses.push(loss);
            theory.network_svals.push(sorted);
            theory.ntk_distance.push(f64::NAN);
        }
        Ok(LambdaSingulars {
            lambda,
            s0: s0.clone(),
            sim_vs_theory: sim_err,
            sigmoid_err: sig_err,
            exponential_err: exp_err,
            sim_exponential_err: sim_exp_err,
            sim,
            theory,
        })
    })?;
    Ok(Report { arch: s.arch, s_target: svd.s.clone(), per_lambda })
}

impl Report {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut table = TrajectoryTable::new();
        for l in &self.per_lambda {
            table.push("sim", &l.sim, l.lambda, self.arch);
            table.push("theory", &l.theory, l.lambda, self.arch);
        }
        vec![table.artifact("singulars.csv"), Artifact::json("summary.json", self)]
    }
}
