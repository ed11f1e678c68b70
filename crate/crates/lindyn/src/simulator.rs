//! Full-batch gradient descent on `½⟨‖W2W1x − y‖²⟩`, trajectory recording,
//! and the continual, reversal, transfer and fine-tuning protocols.

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::init::{self, NetworkParams};
use crate::linalg::{self, Mat};
use crate::tasks::{DataStats, TaskData, TaskSvd};

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    pub record_every: usize,
    /// Time constant: step `k` is recorded at `t = k·η·τ`.
    pub tau: f64,
}

impl TrainConfig {
    pub fn new(eta: f64, steps: usize, record_every: usize) -> Self {
        TrainConfig { eta, steps, record_every, tau: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Precondition("eta must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Precondition("record_every must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Precondition("tau must be positive".into()));
        }
        Ok(())
    }

    pub fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.eta * self.tau
    }

    /// Message when `η · max S̃_λ ≥ 0.1`, where Euler steps stop tracking the flow.
    pub fn stability_warning(&self, svd: &TaskSvd, lambda: f64) -> Option<String> {
        let smax = svd.s.first().copied().unwrap_or(0.0);
        let rate = (smax * smax + lambda * lambda / 4.0).sqrt();
        (self.eta * rate >= 0.1).then(|| {
            format!("eta * max S_lambda = {:.3} >= 0.1; steps may not follow the flow", self.eta * rate)
        })
    }
}

/// `QQᵀ` with `Qᵀ = [W1, W2ᵀ]`, i.e. `[[W1ᵀW1, W1ᵀW2ᵀ], [W2W1, W2W2ᵀ]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Qqt {
    pub m: Mat,
    pub n_in: usize,
    pub n_out: usize,
}

impl Qqt {
    pub fn new(m: Mat, n_in: usize, n_out: usize) -> Self {
        assert_eq!(m.shape(), (n_in + n_out, n_in + n_out), "QQT shape");
        Qqt { m, n_in, n_out }
    }

    pub fn from_params(p: &NetworkParams) -> Self {
        let (ni, no) = (p.n_in(), p.n_out());
        let mut q = Mat::zeros(ni + no, p.n_h());
        q.rows_mut(0, ni).copy_from(&p.w1.transpose());
        q.rows_mut(ni, no).copy_from(&p.w2);
        Qqt::new(&q * q.transpose(), ni, no)
    }

    pub fn from_blocks(w1tw1: &Mat, w2w1: &Mat, w2w2t: &Mat) -> Self {
        let (ni, no) = (w1tw1.nrows(), w2w2t.nrows());
        let mut m = Mat::zeros(ni + no, ni + no);
        m.view_mut((0, 0), (ni, ni)).copy_from(w1tw1);
        m.view_mut((0, ni), (ni, no)).copy_from(&w2w1.transpose());
        m.view_mut((ni, 0), (no, ni)).copy_from(w2w1);
        m.view_mut((ni, ni), (no, no)).copy_from(w2w2t);
        Qqt::new(m, ni, no)
    }

    pub fn w1tw1(&self) -> Mat {
        self.m.view((0, 0), (self.n_in, self.n_in)).into_owned()
    }

    pub fn w1w2t(&self) -> Mat {
        self.m.view((0, self.n_in), (self.n_in, self.n_out)).into_owned()
    }

    pub fn w2w1(&self) -> Mat {
        self.m.view((self.n_in, 0), (self.n_out, self.n_in)).into_owned()
    }

    pub fn w2w2t(&self) -> Mat {
        self.m.view((self.n_in, self.n_in), (self.n_out, self.n_out)).into_owned()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        linalg::to_row_major(&self.m)
    }
}

/// Recorded snapshots; every list has one entry per recorded step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub qqt: Vec<Qqt>,
    /// Descending singular values of `W2W1`.
    pub network_svals: Vec<Vec<f64>>,
    /// Kernel distance of the NTK from its value at the first record.
    pub ntk_distance: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn record(&mut self, step: usize, time: f64, loss: f64, q: Qqt, q0: &Qqt) {
        let w2w1 = q.w2w1();
        self.steps.push(step);
        self.times.push(time);
        self.losses.push(loss);
        self.network_svals.push(linalg::singular_values(&w2w1));
        self.ntk_distance.push(analysis::kernel_distance_whitened(q0, &q).unwrap_or(f64::NAN));
        self.qqt.push(q);
    }
}

/// One simultaneous Euler step of the gradient flow:
/// `W1 += η W2ᵀ E`, `W2 += η E W1ᵀ` with `E = Σʸˣ − W2W1Σˣˣ`.
pub fn gradient_step(params: &NetworkParams, stats: &DataStats, eta: f64) -> NetworkParams {
    let e = &stats.sigma_yx - &params.w2 * &params.w1 * &stats.sigma_xx;
    let w1 = &params.w1 + params.w2.transpose() * &e * eta;
    let w2 = &params.w2 + &e * params.w1.transpose() * eta;
    NetworkParams { w1, w2 }
}

/// `(1/2P) ‖W2W1X − Y‖²_F`.
pub fn loss(params: &NetworkParams, task: &TaskData) -> f64 {
    let r = params.product() * &task.x - &task.y;
    r.norm_squared() / (2.0 * task.n_samples() as f64)
}

fn check_shapes(params: &NetworkParams, stats: &DataStats) -> Result<()> {
    if params.n_in() != stats.n_in() || params.n_out() != stats.n_out() {
        return Err(Error::Dimension(format!(
            "network maps {} -> {} but task maps {} -> {}",
            params.n_in(),
            params.n_out(),
            stats.n_in(),
            stats.n_out()
        )));
    }
    Ok(())
}

/// Trains on `task`, recording step 0, every `record_every` steps, and the last step.
pub fn train(
    params: &NetworkParams,
    task: &TaskData,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, Trajectory)> {
    train_on_stats(params, &crate::tasks::compute_statistics(task), cfg)
}

/// [`train`] driven by the sample covariances alone.
pub fn train_on_stats(
    params: &NetworkParams,
    stats: &DataStats,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, Trajectory)> {
    cfg.validate()?;
    check_shapes(params, stats)?;
    let q0 = Qqt::from_params(params);
    let mut traj = Trajectory::default();
    let mut p = params.clone();
    for step in 0..=cfg.steps {
        let record = step % cfg.record_every == 0 || step == cfg.steps;
        if record {
            let l = analysis::loss_from_network(&p.product(), stats);
            if !(l <= DIVERGENCE_LOSS) {
                return Err(Error::Divergence { step, loss: l });
            }
            traj.record(step, cfg.time_of(step), l, Qqt::from_params(&p), &q0);
        }
        if step < cfg.steps {
            p = gradient_step(&p, stats, cfg.eta);
            if !p.w1.iter().chain(p.w2.iter()).all(|v| v.is_finite()) {
                return Err(Error::Divergence { step: step + 1, loss: f64::INFINITY });
            }
        }
    }
    Ok((p, traj))
}

/// Outcome of training on a sequence of tasks.
#[derive(Debug, Clone)]
pub struct ContinualReport {
    pub trajectories: Vec<Trajectory>,
    /// `losses[j][i]`: loss on task `i` after training on task `j`.
    pub losses: Vec<Vec<f64>>,
    /// `forgetting[k][i]`: predicted change of the loss on task `i` caused by
    /// training task `k` to convergence, from the network before task `k`.
    pub forgetting: Vec<Vec<f64>>,
    /// The same changes measured directly from the recorded losses.
    pub forgetting_direct: Vec<Vec<f64>>,
    /// `recorded_losses[k][r][i]`: loss on task `i` at the `r`-th recorded
    /// step of task `k`, evaluated on the raw samples.
    pub recorded_losses: Vec<Vec<Vec<f64>>>,
    /// `recorded_forgetting[k][r][i]`: `½(‖W(t) − Σᵢ‖² − ‖W_k − Σᵢ‖²)` with
    /// `W_k` the function before task `k`, from the covariances alone.
    pub recorded_forgetting: Vec<Vec<Vec<f64>>>,
}

/// `(1/2P)‖F X − Y‖²` for a network function `F`.
pub fn function_loss(w2w1: &Mat, task: &TaskData) -> f64 {
    (w2w1 * &task.x - &task.y).norm_squared() / (2.0 * task.n_samples() as f64)
}

/// Trains on each task in turn. Forgetting is tracked at every recorded step
/// twice: from the raw samples and from the covariance identity.
pub fn continual_run(
    tasks: &[TaskData],
    init_params: &NetworkParams,
    cfg: &TrainConfig,
) -> Result<ContinualReport> {
    let first = tasks.first().ok_or_else(|| Error::Precondition("no tasks".into()))?;
    for t in tasks {
        if t.n_in() != first.n_in() || t.n_out() != first.n_out() {
            return Err(Error::Dimension("tasks must share dimensions".into()));
        }
    }
    let stats: Vec<DataStats> = tasks.iter().map(crate::tasks::compute_statistics).collect();
    let eval = |w: &Mat| -> Vec<f64> { tasks.iter().map(|t| function_loss(w, t)).collect() };
    let mut p = init_params.clone();
    let mut before = eval(&p.product());
    let mut report = ContinualReport {
        trajectories: Vec::with_capacity(tasks.len()),
        losses: Vec::with_capacity(tasks.len()),
        forgetting: Vec::with_capacity(tasks.len()),
        forgetting_direct: Vec::with_capacity(tasks.len()),
        recorded_losses: Vec::with_capacity(tasks.len()),
        recorded_forgetting: Vec::with_capacity(tasks.len()),
    };
    for st in &stats {
        let w_before = p.product();
        let (next, traj) = train_on_stats(&p, st, cfg)?;
        p = next;
        let mut rec_loss = Vec::with_capacity(traj.len());
        let mut rec_forget = Vec::with_capacity(traj.len());
        for q in &traj.qqt {
            let w = q.w2w1();
            rec_loss.push(eval(&w));
            rec_forget.push(stats.iter().map(|si| analysis::forgetting(&w, &si.sigma_yx, &w_before)).collect());
        }
        let after = eval(&p.product());
        report.forgetting.push(
            stats.iter().map(|si| analysis::forgetting(&st.sigma_yx, &si.sigma_yx, &w_before)).collect(),
        );
        report.forgetting_direct.push(after.iter().zip(&before).map(|(a, b)| a - b).collect());
        report.losses.push(after.clone());
        report.recorded_losses.push(rec_loss);
        report.recorded_forgetting.push(rec_forget);
        report.trajectories.push(traj);
        before = after;
    }
    Ok(report)
}

/// Reflects the selected left singular vectors of `frame`:
/// targets become `R Y` with `R = I − 2 Σ uᵢuᵢᵀ`, so `Σʸˣ ↦ RΣʸˣ` and `Σʸʸ ↦ RΣʸʸR`.
/// Passing the converged network's own frame realises a target whose singular
/// vectors coincide with the network's up to the chosen sign flips.
pub fn make_reversal_task(base: &DataStats, frame: &TaskSvd, reversed: &[usize]) -> Result<DataStats> {
    if frame.n_out() != base.n_out() {
        return Err(Error::Dimension("frame and task output widths differ".into()));
    }
    let n = base.n_out();
    let mut refl = Mat::identity(n, n);
    for &i in reversed {
        if i >= frame.rank() {
            return Err(Error::IndexOutOfRange { index: i, len: frame.rank() });
        }
        let u = frame.u.column(i);
        refl -= u * u.transpose() * 2.0;
    }
    Ok(DataStats {
        sigma_xx: base.sigma_xx.clone(),
        sigma_yx: &refl * &base.sigma_yx,
        sigma_yy: &refl * &base.sigma_yy * &refl,
    })
}

/// First step at which the loss is within `tol` of the task optimum, or
/// `None` if that does not happen within `max_steps`.
pub fn steps_to_convergence(
    params: &NetworkParams,
    stats: &DataStats,
    eta: f64,
    max_steps: usize,
    tol: f64,
) -> Result<Option<usize>> {
    check_shapes(params, stats)?;
    let floor = stats.loss_floor();
    let mut p = params.clone();
    for step in 0..=max_steps {
        let l = analysis::loss_from_network(&p.product(), stats);
        if !(l <= DIVERGENCE_LOSS) {
            return Err(Error::Divergence { step, loss: l });
        }
        if l - floor <= tol {
            return Ok(Some(step));
        }
        if step < max_steps {
            p = gradient_step(&p, stats, eta);
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    ClosedForm,
    /// Gradient descent on a new output row from zero, all else frozen.
    Trained { eta: f64, steps: usize },
}

/// A new output feature learned from a single item.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    /// Hidden-to-feature weights `w2f` (length n_h).
    pub feature_row: Vec<f64>,
    /// Predicted feature value `w2f W1 X` for every item.
    pub generalization: Vec<f64>,
}

/// Learns a new output feature that is 1 on item `item_index`. The converged
/// row is `h_iᵀW1ᵀ/‖W1h_i‖²`, so the feature spreads to other items through
/// the hidden similarity `h_iᵀW1ᵀW1h_j`.
pub fn transfer_new_feature(
    params: &NetworkParams,
    task: &TaskData,
    item_index: usize,
    mode: TransferMode,
) -> Result<Transfer> {
    if item_index >= task.n_samples() {
        return Err(Error::IndexOutOfRange { index: item_index, len: task.n_samples() });
    }
    if task.n_in() != params.n_in() {
        return Err(Error::Dimension("task and network input widths differ".into()));
    }
    let h = task.x.column(item_index);
    let a = &params.w1 * h;
    let a2 = a.norm_squared();
    if a2.sqrt() < 1e-12 {
        return Err(Error::ZeroActivation(item_index));
    }
    let row: Vec<f64> = match mode {
        TransferMode::ClosedForm => a.iter().map(|v| v / a2).collect(),
        TransferMode::Trained { eta, steps } => {
            if !(eta > 0.0) {
                return Err(Error::Precondition("eta must be positive".into()));
            }
            let mut w = vec![0.0; a.len()];
            for step in 0..steps {
                let out: f64 = w.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                let err = 1.0 - out;
                if !err.is_finite() || err.abs() > DIVERGENCE_LOSS {
                    return Err(Error::Divergence { step, loss: 0.5 * err * err });
                }
                for (wk, ak) in w.iter_mut().zip(a.iter()) {
                    *wk += eta * err * ak;
                }
            }
            w
        }
    };
    let hidden = &params.w1 * &task.x;
    let generalization =
        (0..task.n_samples()).map(|j| row.iter().zip(hidden.column(j).iter()).map(|(x, y)| x * y).sum()).collect();
    Ok(Transfer { feature_row: row, generalization })
}

/// Mean of `½(ŷ_j − target_j)²` over the items other than `trained`.
pub fn generalization_loss(generalization: &[f64], target: &[f64], trained: usize) -> f64 {
    let terms: Vec<f64> = generalization
        .iter()
        .zip(target)
        .enumerate()
        .filter(|(j, _)| *j != trained)
        .map(|(_, (g, t))| 0.5 * (g - t).powi(2))
        .collect();
    terms.iter().sum::<f64>() / terms.len().max(1) as f64
}

/// Redistributes the singular values of `W2W1` between the layers so that
/// the balance becomes `lambda_ft · I`, keeping the network function.
/// The hidden frame is reset to the identity.
pub fn rebalance(params: &NetworkParams, lambda_ft: f64) -> Result<NetworkParams> {
    let (ni, nh, no) = (params.n_in(), params.n_h(), params.n_out());
    init::check_balanced_dims(lambda_ft, ni, nh, no)?;
    let m = ni.min(no);
    let d = linalg::svd(&params.product());
    let s = d.s[..m].to_vec();
    if let Some(&smin) = s.last() {
        if smin < 1e-12 {
            return Err(Error::RankDeficient(smin));
        }
    }
    let u = init::complete_basis(&d.u.columns(0, m).into_owned());
    let v = init::complete_basis(&d.v.columns(0, m).into_owned());
    init::compose_balanced(&u, &s, &v, &Mat::identity(nh, nh), lambda_ft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{lambda_balanced_init, BalanceReport};
    use crate::tasks::{compute_statistics, make_random_regression, task_svd};

    #[test]
    fn scalar_step() {
        let p = NetworkParams::new(Mat::from_element(1, 1, 0.5), Mat::from_element(1, 1, 0.5)).unwrap();
        let stats = DataStats {
            sigma_xx: Mat::identity(1, 1),
            sigma_yx: Mat::from_element(1, 1, 2.0),
            sigma_yy: Mat::from_element(1, 1, 4.0),
        };
        let q = gradient_step(&p, &stats, 0.1);
        let want = 0.5 + 0.1 * 0.5 * (2.0 - 0.25);
        assert!((q.w1[(0, 0)] - want).abs() < 1e-15);
        assert!((q.w2[(0, 0)] - want).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let task = make_random_regression(3, 2, 10, 1.0, 4).unwrap();
        let stats = compute_statistics(&task);
        let svd = task_svd(&stats).unwrap();
        let p = crate::exact::task_aligned_init(&svd, &svd.s, 1.0, &Mat::identity(2, 2)).unwrap();
        let q = gradient_step(&p, &stats, 0.01);
        assert!(linalg::max_abs_diff(&p.w1, &q.w1) < 1e-14);
        assert!(linalg::max_abs_diff(&p.w2, &q.w2) < 1e-14);
    }

    #[test]
    fn loss_formulas_agree() {
        for seed in 0..5 {
            let task = make_random_regression(4, 3, 12, 2.0, seed).unwrap();
            let p = lambda_balanced_init(0.5, 4, 3, 3, 0.7, seed).unwrap();
            let direct = loss(&p, &task);
            let via = analysis::loss_from_network(&p.product(), &compute_statistics(&task));
            assert!((direct - via).abs() < 1e-10);
        }
    }

    #[test]
    fn balance_drift_is_second_order() {
        // The first-order terms cancel exactly; what remains is η² per step,
        // so over a fixed time span the drift halves with η.
        let task = make_random_regression(3, 2, 10, 1.0, 1).unwrap();
        let p = lambda_balanced_init(2.0, 3, 2, 2, 0.5, 2).unwrap();
        let (q1, _) = train(&p, &task, &TrainConfig::new(1e-4, 1000, 1000)).unwrap();
        let (q2, _) = train(&p, &task, &TrainConfig::new(5e-5, 2000, 2000)).unwrap();
        let d1 = BalanceReport::new(&q1).deviation_from(2.0);
        let d2 = BalanceReport::new(&q2).deviation_from(2.0);
        assert!(d1 < 1e-4, "drift {d1:e}");
        assert!((d2 / d1 - 0.5).abs() < 0.05, "ratio {}", d2 / d1);
    }

    #[test]
    fn recording_schedule() {
        let task = make_random_regression(2, 2, 4, 1.0, 0).unwrap();
        let p = lambda_balanced_init(0.0, 2, 2, 2, 0.1, 0).unwrap();
        let (_, t) = train(&p, &task, &TrainConfig::new(0.01, 25, 10)).unwrap();
        assert_eq!(t.steps, vec![0, 10, 20, 25]);
        assert!((t.times[3] - 0.25).abs() < 1e-15);
        assert!(t.ntk_distance[0].abs() < 1e-14);
    }

    #[test]
    fn divergence_is_reported() {
        let task = make_random_regression(2, 2, 4, 10.0, 0).unwrap();
        let p = lambda_balanced_init(0.0, 2, 2, 2, 1.0, 0).unwrap();
        let err = train(&p, &task, &TrainConfig::new(5.0, 200, 1)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn reversal_flip_identity() {
        let task = make_random_regression(3, 3, 6, 2.0, 7).unwrap();
        let stats = compute_statistics(&task);
        let svd = task_svd(&stats).unwrap();
        let same = make_reversal_task(&stats, &svd, &[]).unwrap();
        assert_eq!(same, stats);
        let r = make_reversal_task(&stats, &svd, &[0]).unwrap();
        let u0 = svd.u.column(0);
        let v0 = svd.v.column(0);
        let want = &stats.sigma_yx - u0 * v0.transpose() * (2.0 * svd.s[0]);
        assert!(linalg::max_abs_diff(&r.sigma_yx, &want) < 1e-12);
        assert!((r.loss_floor() - stats.loss_floor()).abs() < 1e-12);
        assert!(matches!(
            make_reversal_task(&stats, &svd, &[3]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn rebalance_keeps_function() {
        let p = lambda_balanced_init(0.0, 3, 3, 3, 1.0, 3).unwrap();
        let q = rebalance(&p, 4.0).unwrap();
        assert!(linalg::max_abs_diff(&p.product(), &q.product()) < 1e-8);
        assert!(BalanceReport::new(&q).deviation_from(4.0) < 1e-8);
        let back = rebalance(&q, 0.0).unwrap();
        assert!(BalanceReport::new(&back).deviation_from(0.0) < 1e-8);
    }

    #[test]
    fn transfer_modes_agree() {
        let task = crate::tasks::make_semantic_hierarchy();
        let p = lambda_balanced_init(1.0, 8, 8, 8, 1.0, 5).unwrap();
        let closed = transfer_new_feature(&p, &task, 0, TransferMode::ClosedForm).unwrap();
        assert!((closed.generalization[0] - 1.0).abs() < 1e-10);
        let a2: f64 = (&p.w1 * task.x.column(0)).norm_squared();
        let trained =
            transfer_new_feature(&p, &task, 0, TransferMode::Trained { eta: 0.5 / a2, steps: 200 })
                .unwrap();
        for (x, y) in closed.feature_row.iter().zip(&trained.feature_row) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_tasks_forget_nothing() {
        let task = make_random_regression(3, 2, 6, 1.0, 4).unwrap();
        let p = lambda_balanced_init(0.0, 3, 2, 2, 0.1, 1).unwrap();
        let cfg = TrainConfig::new(0.05, 3000, 500);
        let rep = continual_run(&[task.clone(), task], &p, &cfg).unwrap();
        assert!(rep.forgetting_direct[1][0].abs() < 1e-10);
        assert!(rep.forgetting[1][0].abs() < 1e-10);
        for (ls, fs) in rep.recorded_losses[1].iter().zip(&rep.recorded_forgetting[1]) {
            let direct = ls[0] - rep.losses[0][0];
            assert!((direct - fs[0]).abs() < 1e-12);
        }
    }
}
