//! Observables derived from `QQᵀ`: the NTK and its movement, representational
//! similarity, loss and forgetting algebra, noise sensitivity, and trajectory
//! comparison.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::{self, NetworkParams};
use crate::linalg::{self, Mat};
use crate::par::{self, Mode};
use crate::simulator::{Qqt, Trajectory};
use crate::tasks::{DataStats, TaskData};

/// Finite-width NTK `I_{n_out} ⊗ XᵀW1ᵀW1X + W2W2ᵀ ⊗ XᵀX`, of size
/// `(n_out·P) × (n_out·P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkMatrix {
    pub k: Mat,
}

pub fn ntk_from_qqt(qqt: &Qqt, x: &Mat) -> Result<NtkMatrix> {
    if x.nrows() != qqt.n_in {
        return Err(Error::Dimension(format!(
            "X has {} rows but the network takes {} inputs",
            x.nrows(),
            qqt.n_in
        )));
    }
    let hidden = x.transpose() * qqt.w1tw1() * x;
    let gram = x.transpose() * x;
    let k = linalg::kron(&Mat::identity(qqt.n_out, qqt.n_out), &hidden)
        + linalg::kron(&qqt.w2w2t(), &gram);
    Ok(NtkMatrix { k })
}

/// `1 − ⟨K0, Kt⟩ / (‖K0‖_F ‖Kt‖_F)`.
pub fn kernel_distance(k0: &NtkMatrix, kt: &NtkMatrix) -> Result<f64> {
    if k0.k.shape() != kt.k.shape() {
        return Err(Error::Dimension("kernels differ in shape".into()));
    }
    let (n0, nt) = (k0.k.norm(), kt.k.norm());
    if n0 == 0.0 || nt == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(1.0 - linalg::frob_inner(&k0.k, &kt.k) / (n0 * nt))
}

/// Kernel distance between the NTKs of two networks on whitened inputs,
/// computed from the `QQᵀ` blocks alone. With `XXᵀ = P·I`,
/// `⟨K_a, K_b⟩ = P²[n_out tr(A1B1) + tr A1 tr B2 + tr A2 tr B1 + n_in tr(A2B2)]`
/// where `A1 = W1ᵀW1` and `A2 = W2W2ᵀ`; `P` cancels in the ratio.
pub fn kernel_distance_whitened(q0: &Qqt, qt: &Qqt) -> Result<f64> {
    if q0.n_in != qt.n_in || q0.n_out != qt.n_out {
        return Err(Error::Dimension("QQT shapes differ".into()));
    }
    let (ni, no) = (q0.n_in as f64, q0.n_out as f64);
    let inner = |a: &Qqt, b: &Qqt| -> f64 {
        let (a1, a2, b1, b2) = (a.w1tw1(), a.w2w2t(), b.w1tw1(), b.w2w2t());
        no * linalg::frob_inner(&a1, &b1)
            + a1.trace() * b2.trace()
            + a2.trace() * b1.trace()
            + ni * linalg::frob_inner(&a2, &b2)
    };
    let (n0, nt) = (inner(q0, q0), inner(qt, qt));
    if !(n0 > 0.0 && nt > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(1.0 - inner(q0, qt) / (n0.sqrt() * nt.sqrt()))
}

/// Input representational similarity `XᵀW1ᵀW1X`.
pub fn rsm_input(qqt: &Qqt, x: &Mat) -> Result<Mat> {
    if x.nrows() != qqt.n_in {
        return Err(Error::Dimension("X rows must equal n_in".into()));
    }
    Ok(linalg::symmetrize(&(x.transpose() * qqt.w1tw1() * x)))
}

/// Relative singular-value cutoff of the pseudoinverse in [`rsm_output`].
pub const PINV_CUTOFF: f64 = 1e-10;

/// Output representational similarity `Yᵀ(W2W2ᵀ)⁺Y`.
pub fn rsm_output(qqt: &Qqt, y: &Mat) -> Result<Mat> {
    if y.nrows() != qqt.n_out {
        return Err(Error::Dimension("Y rows must equal n_out".into()));
    }
    let inv = linalg::pinv(&qqt.w2w2t(), PINV_CUTOFF);
    Ok(linalg::symmetrize(&(y.transpose() * inv * y)))
}

/// Trace of the NTK on `p` whitened samples: `P (n_out tr W1ᵀW1 + n_in tr W2W2ᵀ)`.
pub fn ntk_trace_whitened(qqt: &Qqt, n_samples: usize) -> f64 {
    let p = n_samples as f64;
    p * (qqt.n_out as f64 * qqt.w1tw1().trace() + qqt.n_in as f64 * qqt.w2w2t().trace())
}

/// `½‖W2W1 − Σʸˣ‖² − ½tr(ΣʸˣΣʸˣᵀ) + ½tr Σʸʸ`, the loss under whitened inputs.
pub fn loss_from_network(w2w1: &Mat, stats: &DataStats) -> f64 {
    0.5 * (w2w1 - &stats.sigma_yx).norm_squared() + stats.loss_floor()
}

/// Change of the loss on task `i` when a network with function `w2w1` is
/// trained to convergence on task `k`:
/// `½(‖Σ_k − Σ_i‖² − ‖W2W1 − Σ_i‖²)`.
pub fn forgetting(sigma_k: &Mat, sigma_i: &Mat, w2w1: &Mat) -> f64 {
    0.5 * ((sigma_k - sigma_i).norm_squared() - (w2w1 - sigma_i).norm_squared())
}

/// Expected excess loss of a converged network when whitened inputs receive
/// i.i.d. noise of standard deviation `sigma_x`: `½σ²Σs̃²`. The task constant
/// `c` is not included.
pub fn expected_loss_input_noise(s_tilde: &[f64], sigma_x: f64) -> f64 {
    0.5 * sigma_x * sigma_x * s_tilde.iter().map(|s| s * s).sum::<f64>()
}

/// Squared Frobenius norms `(‖W1‖², ‖W2‖²)` of a converged lambda-balanced
/// network with task singular values `s_tilde`.
pub fn converged_layer_norms(s_tilde: &[f64], lambda: f64, dims: (usize, usize, usize)) -> (f64, f64) {
    let (ni, nh, no) = dims;
    let (s1, s2) = init::balanced_split(s_tilde, lambda);
    let mut w1 = s1.iter().map(|x| x * x).sum::<f64>();
    let mut w2 = s2.iter().map(|x| x * x).sum::<f64>();
    // Hidden units outside the shared block carry only the balance.
    for k in s_tilde.len()..nh {
        if k < no {
            w2 += lambda.max(0.0);
        }
        if k < ni {
            w1 += (-lambda).max(0.0);
        }
    }
    (w1, w2)
}

/// Expected excess loss of a converged network whose weights receive i.i.d.
/// noise of standard deviation `sigma_w`:
/// `½N_iσ²‖W2‖² + ½N_oσ²‖W1‖² + ½N_iN_hN_oσ⁴`. The task constant is not included.
pub fn expected_loss_param_noise(
    s_tilde: &[f64],
    lambda: f64,
    dims: (usize, usize, usize),
    sigma_w: f64,
) -> f64 {
    let (ni, nh, no) = (dims.0 as f64, dims.1 as f64, dims.2 as f64);
    let (w1, w2) = converged_layer_norms(s_tilde, lambda, dims);
    let v = sigma_w * sigma_w;
    0.5 * ni * v * w2 + 0.5 * no * v * w1 + 0.5 * ni * nh * no * v * v
}

/// Left side minus right side of the stationarity condition of
/// [`expected_loss_param_noise`] in λ:
/// `Σ λ/√(λ²+4s̃²) − N_h(N_o − N_i)/(N_i + N_o)`.
pub fn param_noise_stationarity(s_tilde: &[f64], lambda: f64, dims: (usize, usize, usize)) -> f64 {
    let (ni, nh, no) = (dims.0 as f64, dims.1 as f64, dims.2 as f64);
    let lhs: f64 = s_tilde.iter().map(|s| lambda / (lambda * lambda + 4.0 * s * s).sqrt()).sum();
    lhs - nh * (no - ni) / (ni + no)
}

/// λ minimising the parameter-noise loss, by bisection on
/// `[−10 max s̃, 10 max s̃]` to 1e-10.
pub fn optimal_lambda_param_noise(s_tilde: &[f64], dims: (usize, usize, usize)) -> Result<f64> {
    let (ni, nh, no) = dims;
    if s_tilde.len() != nh {
        return Err(Error::Precondition(format!(
            "need one singular value per hidden unit ({nh}), got {}",
            s_tilde.len()
        )));
    }
    let smax = s_tilde.iter().copied().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(Error::NoRoot("all singular values vanish".into()));
    }
    let f = |l: f64| param_noise_stationarity(s_tilde, l, (ni, nh, no));
    let (mut lo, mut hi) = (-10.0 * smax, 10.0 * smax);
    let (flo, fhi) = (f(lo), f(hi));
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::NoRoot(format!(
            "stationarity residual keeps one sign on [{lo}, {hi}] ({flo:e}, {fhi:e})"
        )));
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    Ok(if root.abs() < 1e-10 { 0.0 } else { root })
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_trials: usize,
}

fn estimate(xs: &[f64]) -> McEstimate {
    let (mean, var) = init::mean_var(xs);
    McEstimate { mean, stderr: (var / xs.len() as f64).sqrt(), n_trials: xs.len() }
}

/// Monte Carlo loss with i.i.d. Gaussian noise on the inputs; trial `i` uses seed `seed + i`.
pub fn monte_carlo_input_noise(
    mode: Mode,
    w2w1: &Mat,
    task: &TaskData,
    sigma_x: f64,
    n_trials: usize,
    seed: u64,
) -> McEstimate {
    let p = task.n_samples() as f64;
    let trials: Vec<u64> = (0..n_trials as u64).collect();
    let losses = par::map_with(mode, trials, |i| {
        let mut rng = linalg::rng(seed.wrapping_add(i));
        let xi = linalg::randn(task.n_in(), task.n_samples(), &mut rng) * sigma_x;
        (w2w1 * (&task.x + xi) - &task.y).norm_squared() / (2.0 * p)
    });
    estimate(&losses)
}

/// Monte Carlo loss with i.i.d. Gaussian noise on both weight matrices.
pub fn monte_carlo_param_noise(
    mode: Mode,
    params: &NetworkParams,
    task: &TaskData,
    sigma_w: f64,
    n_trials: usize,
    seed: u64,
) -> McEstimate {
    let p = task.n_samples() as f64;
    let trials: Vec<u64> = (0..n_trials as u64).collect();
    let losses = par::map_with(mode, trials, |i| {
        let mut rng = linalg::rng(seed.wrapping_add(i));
        let w1 = &params.w1 + linalg::randn(params.n_h(), params.n_in(), &mut rng) * sigma_w;
        let w2 = &params.w2 + linalg::randn(params.n_out(), params.n_h(), &mut rng) * sigma_w;
        (w2 * w1 * &task.x - &task.y).norm_squared() / (2.0 * p)
    });
    estimate(&losses)
}

/// Errors of a simulated trajectory against the closed form on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub max_abs_err: f64,
    /// `max_abs_err` over the largest absolute entry of the exact trajectory.
    pub rel_err: f64,
    /// Max-abs errors of the `W1ᵀW1`, `W1ᵀW2ᵀ`, `W2W1`, `W2W2ᵀ` blocks.
    pub per_block_err: [f64; 4],
    pub time_grid: Vec<f64>,
}

pub fn compare_trajectories(sim: &Trajectory, exact: &Trajectory) -> Result<ComparisonReport> {
    if sim.qqt.len() != exact.qqt.len() || sim.times.len() != exact.times.len() {
        return Err(Error::GridMismatch);
    }
    let scale = exact.times.iter().fold(1.0f64, |a, t| a.max(t.abs()));
    if sim.times.iter().zip(&exact.times).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
        return Err(Error::GridMismatch);
    }
    let mut blocks = [0.0f64; 4];
    let mut peak = 0.0f64;
    for (a, b) in sim.qqt.iter().zip(&exact.qqt) {
        if a.m.shape() != b.m.shape() {
            return Err(Error::GridMismatch);
        }
        let errs = [
            linalg::max_abs_diff(&a.w1tw1(), &b.w1tw1()),
            linalg::max_abs_diff(&a.w1w2t(), &b.w1w2t()),
            linalg::max_abs_diff(&a.w2w1(), &b.w2w1()),
            linalg::max_abs_diff(&a.w2w2t(), &b.w2w2t()),
        ];
        for (acc, e) in blocks.iter_mut().zip(errs) {
            *acc = acc.max(e);
        }
        peak = peak.max(linalg::max_abs(&b.m));
    }
    let max_abs_err = blocks.iter().copied().fold(0.0, f64::max);
    Ok(ComparisonReport {
        max_abs_err,
        rel_err: if peak > 0.0 { max_abs_err / peak } else { max_abs_err },
        per_block_err: blocks,
        time_grid: exact.times.clone(),
    })
}
