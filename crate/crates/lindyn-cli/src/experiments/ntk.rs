//! NTK movement across architectures, relative scales and absolute scales.

use lindyn::init;
use lindyn::simulator::{self, Trajectory};
use lindyn::tasks;
use serde::Serialize;

use super::{task_for, Arch};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{arch_name, num, sub_seed, Artifact, TrajectoryTable};
use crate::RunError;

pub struct SweepSettings {
    pub archs: Vec<Arch>,
}

impl SweepSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.param_usize("samples")?;
        cfg.param_f64("sigma_y")?;
        super::init_scale(cfg, 1.0)?;
        Ok(SweepSettings { archs: cfg.archs()? })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub arch: Arch,
    pub lambda: f64,
    pub final_distance: f64,
    pub final_loss: f64,
    #[serde(skip)]
    pub sim: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Final kernel distances of one architecture, in λ order.
    pub fn curve(&self, arch: Arch) -> Vec<(f64, f64)> {
        self.points.iter().filter(|p| p.arch == arch).map(|p| (p.lambda, p.final_distance)).collect()
    }

    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut table = TrajectoryTable::new();
        for p in &self.points {
            table.push("sim", &p.sim, p.lambda, p.arch);
        }
        vec![table.artifact("ntk_sweep.csv"), Artifact::json("summary.json", self)]
    }
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, RunError> {
    let s = SweepSettings::parse(cfg)?;
    let tc = cfg.train_config();
    let mut jobs = Vec::new();
    for &arch in &s.archs {
        let stats = tasks::compute_statistics(&task_for(cfg, arch, 0)?);
        for &lambda in &cfg.lambda_list {
            jobs.push((arch, lambda, stats.clone()));
        }
    }
    let points = lindyn::par::map(jobs, |(arch, lambda, stats)| -> Result<SweepPoint, RunError> {
        let p0 = super::init_for(cfg, lambda, arch, 0)?;
        let (_, sim) = simulator::train_on_stats(&p0, &stats, &tc)?;
        Ok(SweepPoint {
            arch,
            lambda,
            final_distance: *sim.ntk_distance.last().expect("recorded"),
            final_loss: *sim.losses.last().expect("recorded"),
            sim,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport { points })
}

pub struct PhaseSettings {
    pub archs: Vec<Arch>,
    pub scales: Vec<f64>,
}

impl PhaseSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.param_usize("samples")?;
        cfg.param_f64("sigma_y")?;
        let scales = cfg.param_list("scales")?;
        if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(ConfigError::Field { field: "scales".into(), message: "must be positive".into() });
        }
        Ok(PhaseSettings { archs: cfg.archs()?, scales })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCell {
    pub arch: Arch,
    pub lambda: f64,
    pub scale: f64,
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub kernel_distance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    pub cells: Vec<PhaseCell>,
}

impl PhaseReport {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let header: Vec<String> =
            ["arch", "lambda", "scale", "time", "loss", "kernel_distance"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for c in &self.cells {
            for k in 0..c.times.len() {
                rows.push(vec![
                    arch_name(c.arch),
                    num(c.lambda),
                    num(c.scale),
                    num(c.times[k]),
                    num(c.losses[k]),
                    num(c.kernel_distance[k]),
                ]);
            }
        }
        vec![Artifact::csv("phase_map.csv", &header, &rows)]
    }
}

/// Trains every (architecture, λ, absolute scale) cell from a lambda-balanced
/// start whose network function has the given Frobenius norm.
pub fn run_phase_map(cfg: &ExperimentConfig) -> Result<PhaseReport, RunError> {
    let s = PhaseSettings::parse(cfg)?;
    let tc = cfg.train_config();
    let mut jobs = Vec::new();
    for &arch in &s.archs {
        let stats = tasks::compute_statistics(&task_for(cfg, arch, 0)?);
        for &lambda in &cfg.lambda_list {
            for (j, &scale) in s.scales.iter().enumerate() {
                jobs.push((arch, lambda, j as u64, scale, stats.clone()));
            }
        }
    }
    let cells = lindyn::par::map(jobs, |(arch, lambda, j, scale, stats)| -> Result<PhaseCell, RunError> {
        let seed = sub_seed(cfg.seed, "init", lambda, arch, j);
        let p0 = init::lambda_balanced_with_scale(lambda, arch, scale, seed)?;
        let (_, sim) = simulator::train_on_stats(&p0, &stats, &tc)?;
        Ok(PhaseCell {
            arch,
            lambda,
            scale,
            times: sim.times,
            losses: sim.losses,
            kernel_distance: sim.ntk_distance,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(PhaseReport { cells })
}
