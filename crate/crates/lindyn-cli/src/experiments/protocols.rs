//! Continual, reversal, transfer and fine-tuning protocols.

use lindyn::init::{BalanceReport, NetworkParams};
use lindyn::linalg;
use lindyn::simulator::{self, Trajectory, TrainConfig, TransferMode};
use lindyn::tasks::{self, DataStats, TaskData, TaskKind, TaskSvd, HIERARCHY_LABELS};
use serde::Serialize;

use super::{over_lambdas, task_for, Arch};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{num, Artifact, TrajectoryTable};
use crate::RunError;

fn field(name: &str, message: &str) -> ConfigError {
    ConfigError::Field { field: name.into(), message: message.into() }
}

/// Trains from a lambda-balanced start for `steps` steps.
fn pretrain(
    cfg: &ExperimentConfig,
    lambda: f64,
    arch: Arch,
    stats: &DataStats,
    steps: usize,
) -> Result<(NetworkParams, Trajectory), RunError> {
    let p0 = super::init_for(cfg, lambda, arch, 0)?;
    let tc = TrainConfig::new(cfg.eta, steps, cfg.record_every);
    Ok(simulator::train_on_stats(&p0, stats, &tc)?)
}

pub struct ContinualSettings {
    pub arch: Arch,
    pub n_tasks: usize,
}

impl ContinualSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.param_usize("samples")?;
        cfg.param_f64("sigma_y")?;
        super::init_scale(cfg, 0.0)?;
        super::init_scale(cfg, 1.0)?;
        let n_tasks = cfg.param_usize("tasks")?;
        if n_tasks < 2 {
            return Err(field("tasks", "need at least two tasks"));
        }
        Ok(ContinualSettings { arch: cfg.dims, n_tasks })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinualLambda {
    pub lambda: f64,
    /// `losses[k][i]`: loss on task `i` after training task `k`.
    pub losses: Vec<Vec<f64>>,
    /// Predicted forgetting from the end-of-task targets.
    pub forgetting: Vec<Vec<f64>>,
    pub forgetting_direct: Vec<Vec<f64>>,
    /// Max over tasks, recorded steps and evaluated tasks of
    /// |covariance identity − raw-sample loss change|.
    pub identity_err: f64,
    /// Recorded points where the loss on an earlier task went down while a
    /// later one was trained, and the largest such drop.
    pub monotone_violations: usize,
    pub max_decrease: f64,
    #[serde(skip)]
    pub recorded_losses: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub recorded_forgetting: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinualReport {
    pub arch: Arch,
    pub n_tasks: usize,
    pub per_lambda: Vec<ContinualLambda>,
}

pub fn run_continual(cfg: &ExperimentConfig) -> Result<ContinualReport, RunError> {
    let s = ContinualSettings::parse(cfg)?;
    let task_list: Vec<TaskData> =
        (0..s.n_tasks as u64).map(|k| task_for(cfg, s.arch, k)).collect::<Result<_, _>>()?;
    let tc = cfg.train_config();
    let per_lambda = over_lambdas(&cfg.lambda_list, |lambda| {
        let p0 = super::init_for(cfg, lambda, s.arch, 0)?;
        let rep = simulator::continual_run(&task_list, &p0, &tc)?;
        let mut identity_err = 0.0f64;
        let (mut violations, mut max_decrease) = (0usize, 0.0f64);
        for (k, rows) in rep.recorded_losses.iter().enumerate() {
            for (r, row) in rows.iter().enumerate() {
                for i in 0..row.len() {
                    let direct = row[i] - rows[0][i];
                    identity_err = identity_err.max((rep.recorded_forgetting[k][r][i] - direct).abs());
                    if i < k && r > 0 {
                        let drop = rows[r - 1][i] - row[i];
                        if drop > 0.0 {
                            violations += 1;
                            max_decrease = max_decrease.max(drop);
                        }
                    }
                }
            }
        }
        Ok(ContinualLambda {
            lambda,
            losses: rep.losses,
            forgetting: rep.forgetting,
            forgetting_direct: rep.forgetting_direct,
            identity_err,
            monotone_violations: violations,
            max_decrease,
            recorded_losses: rep.recorded_losses,
            recorded_forgetting: rep.recorded_forgetting,
            trajectories: rep.trajectories,
        })
    })?;
    Ok(ContinualReport { arch: s.arch, n_tasks: s.n_tasks, per_lambda })
}

impl ContinualReport {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let n = self.n_tasks;
        let mut header: Vec<String> = ["lambda", "trained_task", "step", "time"].map(String::from).to_vec();
        header.extend((1..=n).map(|i| format!("loss_{i}")));
        header.extend((1..=n).map(|i| format!("forgetting_{i}")));
        let mut rows = Vec::new();
        let mut table = TrajectoryTable::new();
        for l in &self.per_lambda {
            for (k, traj) in l.trajectories.iter().enumerate() {
                table.push(&format!("task_{}", k + 1), traj, l.lambda, self.arch);
                for r in 0..traj.len() {
                    let mut row = vec![num(l.lambda), (k + 1).to_string(), traj.steps[r].to_string(), num(traj.times[r])];
                    row.extend(l.recorded_losses[k][r].iter().map(|v| num(*v)));
                    row.extend(l.recorded_forgetting[k][r].iter().map(|v| num(*v)));
                    rows.push(row);
                }
            }
        }
        vec![
            Artifact::csv("continual.csv", &header, &rows),
            table.artifact("trajectories.csv"),
            Artifact::json("summary.json", self),
        ]
    }
}

pub struct ReversalSettings {
    pub arch: Arch,
    pub reversed: Vec<usize>,
    pub max_steps: usize,
    pub tol: f64,
}

impl ReversalSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.param_usize("samples")?;
        cfg.param_f64("sigma_y")?;
        super::init_scale(cfg, 0.0)?;
        super::init_scale(cfg, 1.0)?;
        let reversed = cfg.param_usize_list("reversed")?;
        let m = cfg.dims.0.min(cfg.dims.2);
        if reversed.is_empty() || reversed.iter().any(|&i| i >= m) {
            return Err(field("reversed", &format!("mode indices must lie in 0..{m}")));
        }
        let tol = cfg.param_f64("tol")?;
        if !(tol > 0.0) {
            return Err(field("tol", "must be positive"));
        }
        Ok(ReversalSettings { arch: cfg.dims, reversed, max_steps: cfg.param_usize("max_steps")?, tol })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReversalLambda {
    pub lambda: f64,
    /// Loss above the optimum after pretraining.
    pub pretrain_gap: f64,
    /// Steps until the loss is within `tol` of the optimum; `None` when that
    /// does not happen within `max_steps`.
    pub reversal_steps: Option<usize>,
    pub control_steps: Option<usize>,
    /// Square networks only: the control target's determinant has the
    /// opposite sign to the pretrained function's, so one mode must pass
    /// through zero on the way.
    pub control_sign_flip: Option<bool>,
    #[serde(skip)]
    pub reversal: Trajectory,
    #[serde(skip)]
    pub control: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReversalReport {
    pub arch: Arch,
    pub reversed: Vec<usize>,
    pub max_steps: usize,
    pub tol: f64,
    pub per_lambda: Vec<ReversalLambda>,
}

impl ReversalReport {
    /// Steps at `lambda`, with runs that never converged counted as
    /// `max_steps + 1` (so ratios built from them are lower bounds).
    pub fn steps(&self, lambda: f64, control: bool) -> Option<(usize, bool)> {
        let l = self.per_lambda.iter().find(|l| l.lambda == lambda)?;
        let s = if control { l.control_steps } else { l.reversal_steps };
        Some(s.map_or((self.max_steps + 1, false), |s| (s, true)))
    }

    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut table = TrajectoryTable::new();
        for l in &self.per_lambda {
            table.push("reversal", &l.reversal, l.lambda, self.arch);
            table.push("control", &l.control, l.lambda, self.arch);
        }
        vec![table.artifact("trajectories.csv"), Artifact::json("summary.json", self)]
    }
}

/// Pretrains on a task, then retrains on a copy whose selected modes are
/// reflected in the network's own frame, and on a fresh control task.
pub fn run_reversal(cfg: &ExperimentConfig) -> Result<ReversalReport, RunError> {
    let s = ReversalSettings::parse(cfg)?;
    let stats = tasks::compute_statistics(&task_for(cfg, s.arch, 0)?);
    let control = tasks::compute_statistics(&task_for(cfg, s.arch, 1)?);
    let tc = cfg.train_config();
    let per_lambda = over_lambdas(&cfg.lambda_list, |lambda| {
        let (p1, _) = pretrain(cfg, lambda, s.arch, &stats, cfg.steps)?;
        let pretrain_gap = lindyn::analysis::loss_from_network(&p1.product(), &stats) - stats.loss_floor();
        let frame = TaskSvd::from_matrix(&p1.product())?;
        let rev = simulator::make_reversal_task(&stats, &frame, &s.reversed)?;
        let reversal_steps = simulator::steps_to_convergence(&p1, &rev, cfg.eta, s.max_steps, s.tol)?;
        let control_steps = simulator::steps_to_convergence(&p1, &control, cfg.eta, s.max_steps, s.tol)?;
        let (_, reversal) = simulator::train_on_stats(&p1, &rev, &tc)?;
        let (_, control_traj) = simulator::train_on_stats(&p1, &control, &tc)?;
        let w = p1.product();
        let control_sign_flip =
            w.is_square().then(|| w.determinant().signum() != control.sigma_yx.determinant().signum());
        Ok(ReversalLambda {
            lambda,
            pretrain_gap,
            reversal_steps,
            control_steps,
            control_sign_flip,
            reversal,
            control: control_traj,
        })
    })?;
    Ok(ReversalReport { arch: s.arch, reversed: s.reversed, max_steps: s.max_steps, tol: s.tol, per_lambda })
}

pub struct TransferSettings {
    pub item: usize,
    pub feature_eta: f64,
    pub feature_steps: usize,
}

impl TransferSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        super::init_scale(cfg, 0.0)?;
        super::init_scale(cfg, 1.0)?;
        let item = cfg.param_usize("item")?;
        if item >= 8 {
            return Err(field("item", "the hierarchy has items 0..8"));
        }
        let feature_eta = cfg.param_f64("feature_eta")?;
        if !(feature_eta > 0.0) {
            return Err(field("feature_eta", "must be positive"));
        }
        Ok(TransferSettings { item, feature_eta, feature_steps: cfg.param_usize("feature_steps")? })
    }
}

/// Ideal spread of a feature first seen on `item`: each item's label overlap
/// with it, normalised so the trained item gets 1.
pub fn hierarchy_transfer_target(item: usize) -> Vec<f64> {
    let col = |j: usize| HIERARCHY_LABELS.iter().map(move |row| row[j]);
    let norm: f64 = col(item).map(|v| v * v).sum();
    (0..8).map(|j| col(item).zip(col(j)).map(|(a, b)| a * b).sum::<f64>() / norm).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferLambda {
    pub lambda: f64,
    pub closed_row: Vec<f64>,
    pub trained_row: Vec<f64>,
    /// Max-abs difference of the two feature rows.
    pub row_err: f64,
    pub generalization: Vec<f64>,
    /// Mean squared error on the untrained items, from the trained row.
    pub generalization_loss: f64,
    pub generalization_loss_closed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub item: usize,
    pub target: Vec<f64>,
    pub per_lambda: Vec<TransferLambda>,
}

pub fn run_transfer(cfg: &ExperimentConfig) -> Result<TransferReport, RunError> {
    let s = TransferSettings::parse(cfg)?;
    let task = task_for(cfg, cfg.dims, 0)?;
    let stats = tasks::compute_statistics(&task);
    let target = hierarchy_transfer_target(s.item);
    let per_lambda = over_lambdas(&cfg.lambda_list, |lambda| {
        let (p, _) = pretrain(cfg, lambda, cfg.dims, &stats, cfg.steps)?;
        let closed = simulator::transfer_new_feature(&p, &task, s.item, TransferMode::ClosedForm)?;
        let mode = TransferMode::Trained { eta: s.feature_eta, steps: s.feature_steps };
        let trained = simulator::transfer_new_feature(&p, &task, s.item, mode)?;
        let row_err =
            closed.feature_row.iter().zip(&trained.feature_row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(TransferLambda {
            lambda,
            row_err,
            generalization_loss: simulator::generalization_loss(&trained.generalization, &target, s.item),
            generalization_loss_closed: simulator::generalization_loss(&closed.generalization, &target, s.item),
            generalization: trained.generalization,
            closed_row: closed.feature_row,
            trained_row: trained.feature_row,
        })
    })?;
    Ok(TransferReport { item: s.item, target, per_lambda })
}

impl TransferReport {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut header: Vec<String> = ["lambda", "generalization_loss", "row_err"].map(String::from).to_vec();
        header.extend((1..=self.target.len()).map(|j| format!("item_{j}")));
        let rows: Vec<Vec<String>> = self
            .per_lambda
            .iter()
            .map(|l| {
                let mut r = vec![num(l.lambda), num(l.generalization_loss), num(l.row_err)];
                r.extend(l.generalization.iter().map(|v| num(*v)));
                r
            })
            .collect();
        vec![Artifact::csv("transfer.csv", &header, &rows), Artifact::json("summary.json", self)]
    }
}

pub struct FinetuneSettings {
    pub pretrain_steps: usize,
    pub lambda_pt: Vec<f64>,
}

impl FinetuneSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        super::init_scale(cfg, 0.0)?;
        super::init_scale(cfg, 1.0)?;
        let lambda_pt = cfg.param_list("lambda_pt")?;
        if lambda_pt.is_empty() {
            return Err(field("lambda_pt", "is empty"));
        }
        Ok(FinetuneSettings { pretrain_steps: cfg.param_usize("pretrain_steps")?, lambda_pt })
    }
}

pub const FINETUNE_TASKS: [&str; 3] = ["add_feature", "reversal", "scaled"];

/// The three fine-tuning targets for a network pretrained on the hierarchy:
/// item 3 gains a feature of item 1, the leading mode reversed in the
/// network's frame, and the hierarchy with doubled targets.
fn finetune_tasks(base: &TaskData, pretrained: &NetworkParams) -> Result<Vec<DataStats>, RunError> {
    let mut y = base.y.clone();
    y[(4, 2)] = y[(4, 0)];
    let add = tasks::compute_statistics(&TaskData::new(base.x.clone(), y, TaskKind::Custom)?);
    let stats = tasks::compute_statistics(base);
    let frame = TaskSvd::from_matrix(&pretrained.product())?;
    let rev = simulator::make_reversal_task(&stats, &frame, &[0])?;
    let scaled = tasks::compute_statistics(&TaskData::new(base.x.clone(), &base.y * 2.0, TaskKind::Custom)?);
    Ok(vec![add, rev, scaled])
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneRun {
    pub lambda_pt: f64,
    pub task: String,
    /// `None` for the network fine-tuned without rebalancing.
    pub lambda_ft: Option<f64>,
    pub function_err: f64,
    pub balance_err: f64,
    pub loss_start: f64,
    pub loss_end: f64,
    pub decrease: f64,
    #[serde(skip)]
    pub traj: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneReport {
    pub budget: usize,
    pub runs: Vec<FinetuneRun>,
}

impl FinetuneReport {
    pub fn find(&self, lambda_pt: f64, task: &str, lambda_ft: Option<f64>) -> Option<&FinetuneRun> {
        self.runs.iter().find(|r| r.lambda_pt == lambda_pt && r.task == task && r.lambda_ft == lambda_ft)
    }

    pub fn artifacts(&self) -> Vec<Artifact> {
        let header: Vec<String> = ["lambda_pt", "task", "lambda_ft", "step", "time", "loss"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for r in &self.runs {
            let ft = r.lambda_ft.map_or("none".to_string(), num);
            for k in 0..r.traj.len() {
                rows.push(vec![
                    num(r.lambda_pt),
                    r.task.clone(),
                    ft.clone(),
                    r.traj.steps[k].to_string(),
                    num(r.traj.times[k]),
                    num(r.traj.losses[k]),
                ]);
            }
        }
        vec![Artifact::csv("finetune.csv", &header, &rows), Artifact::json("summary.json", self)]
    }
}

/// Pretrains on the hierarchy for each λ_PT, rebalances to each λ_FT (and
/// once not at all), then trains each fine-tuning task for `cfg.steps`.
pub fn run_finetune(cfg: &ExperimentConfig) -> Result<FinetuneReport, RunError> {
    let s = FinetuneSettings::parse(cfg)?;
    let base = task_for(cfg, cfg.dims, 0)?;
    let stats = tasks::compute_statistics(&base);
    let tc = cfg.train_config();
    let pretrained = over_lambdas(&s.lambda_pt, |lpt| {
        let (p, _) = pretrain(cfg, lpt, cfg.dims, &stats, s.pretrain_steps)?;
        let fts = finetune_tasks(&base, &p)?;
        Ok((lpt, p, fts))
    })?;
    let mut jobs = Vec::new();
    for (lpt, p, fts) in &pretrained {
        for (name, ft) in FINETUNE_TASKS.iter().zip(fts) {
            jobs.push((*lpt, p, *name, ft, None));
            for &lft in &cfg.lambda_list {
                jobs.push((*lpt, p, *name, ft, Some(lft)));
            }
        }
    }
    let runs = lindyn::par::map(jobs, |(lpt, p, name, ft, lft)| -> Result<FinetuneRun, RunError> {
        let start = match lft {
            Some(l) => simulator::rebalance(p, l)?,
            None => p.clone(),
        };
        let function_err = linalg::max_abs_diff(&start.product(), &p.product());
        let balance_err = lft.map_or(0.0, |l| BalanceReport::new(&start).deviation_from(l));
        let (_, traj) = simulator::train_on_stats(&start, ft, &tc)?;
        let (loss_start, loss_end) = (traj.losses[0], *traj.losses.last().expect("recorded"));
        Ok(FinetuneRun {
            lambda_pt: lpt,
            task: name.to_string(),
            lambda_ft: lft,
            function_err,
            balance_err,
            loss_start,
            loss_end,
            decrease: loss_start - loss_end,
            traj,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(FinetuneReport { budget: cfg.steps, runs })
}
