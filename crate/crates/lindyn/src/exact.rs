//! Closed-form dynamics of `QQᵀ` from a lambda-balanced start.
//!
//! Under whitened inputs and `W2ᵀW2 − W1W1ᵀ = λI`, `QQᵀ` obeys the Riccati
//! equation `τ d(QQᵀ)/dt = F QQᵀ + QQᵀ F − (QQᵀ)²` with
//! `F = [[−λ/2 I, Σʸˣᵀ], [Σʸˣ, λ/2 I]]`. `F` diagonalises in the task's
//! singular frame, which gives the explicit solution evaluated here. All
//! exponentials act on diagonals, so no general matrix exponential is needed.

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::init::{self, BalanceReport, NetworkParams};
use crate::linalg::{self, Mat};
use crate::simulator::{Qqt, Trajectory};
use crate::tasks::{DataStats, TaskSvd};

/// Tolerance on `‖W2ᵀW2 − W1W1ᵀ − λI‖_max` accepted by [`build_context`].
pub const BALANCE_TOL: f64 = 1e-6;
/// Condition estimate of `A(t)` above which [`qqt_exact`] refuses to invert.
pub const MAX_CONDITION: f64 = 1e12;
/// Smallest singular value of `B` accepted by [`qqt_exact_stable`].
pub const MIN_B_SINGULAR: f64 = 1e-10;

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `F = [[−λ/2 I, Σʸˣᵀ], [Σʸˣ, λ/2 I]]`.
pub fn build_f(svd: &TaskSvd, lambda: f64) -> Mat {
    let (ni, no) = (svd.n_in(), svd.n_out());
    let sigma = svd.sigma_yx();
    let mut f = Mat::zeros(ni + no, ni + no);
    f.view_mut((0, 0), (ni, ni)).fill_with_identity();
    f.view_mut((0, 0), (ni, ni)).scale_mut(-lambda / 2.0);
    f.view_mut((ni, ni), (no, no)).fill_with_identity();
    f.view_mut((ni, ni), (no, no)).scale_mut(lambda / 2.0);
    f.view_mut((0, ni), (ni, no)).copy_from(&sigma.transpose());
    f.view_mut((ni, 0), (no, ni)).copy_from(&sigma);
    f
}

/// Diagonal quantities of the eigendecomposition of `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `S̃_λ = √(S̃² + λ²/4)`.
    pub s_lambda: Vec<f64>,
    /// `H̃ = sgn(λ) √((S̃_λ − S̃)/(S̃_λ + S̃))`, with `sgn(0) = 0`.
    pub h: Vec<f64>,
    /// `G̃ = 1/√(1 + H̃²)`.
    pub g: Vec<f64>,
    /// `λ⊥ = sgn(n_out − n_in) λ/2`.
    pub lambda_perp: f64,
}

impl Spectrum {
    pub fn new(svd: &TaskSvd, lambda: f64) -> Self {
        let s_lambda: Vec<f64> =
            svd.s.iter().map(|s| (s * s + lambda * lambda / 4.0).sqrt()).collect();
        let h: Vec<f64> = svd
            .s
            .iter()
            .zip(&s_lambda)
            .map(|(s, sl)| {
                // (S_λ − S)/(S_λ + S) = (λ²/4)/(S_λ + S)², free of cancellation.
                sgn(lambda) * (lambda.abs() / 2.0) / (sl + s)
            })
            .collect();
        let g: Vec<f64> = h.iter().map(|h| 1.0 / (1.0 + h * h).sqrt()).collect();
        let diff = svd.n_out() as f64 - svd.n_in() as f64;
        Spectrum { s_lambda, h, g, lambda_perp: sgn(diff) * lambda / 2.0 }
    }

    /// `G̃ − H̃G̃`.
    pub fn g_minus(&self) -> Vec<f64> {
        self.g.iter().zip(&self.h).map(|(g, h)| g - h * g).collect()
    }

    /// `G̃ + H̃G̃`.
    pub fn g_plus(&self) -> Vec<f64> {
        self.g.iter().zip(&self.h).map(|(g, h)| g + h * g).collect()
    }
}

/// Orthonormal eigenvectors `P` and eigenvalues `(S̃_λ, −S̃_λ, λ⊥)` of `F`.
pub fn eigen_f(svd: &TaskSvd, lambda: f64) -> (Mat, Vec<f64>) {
    let sp = Spectrum::new(svd, lambda);
    let (ni, no, m) = (svd.n_in(), svd.n_out(), svd.rank());
    let k = ni.abs_diff(no);
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let (gm, gp) = (sp.g_minus(), sp.g_plus());
    let mut p = Mat::zeros(ni + no, 2 * m + k);
    p.view_mut((0, 0), (ni, m)).copy_from(&(linalg::scale_cols(&svd.v, &gm) * r2));
    p.view_mut((ni, 0), (no, m)).copy_from(&(linalg::scale_cols(&svd.u, &gp) * r2));
    p.view_mut((0, m), (ni, m)).copy_from(&(linalg::scale_cols(&svd.v, &gp) * r2));
    p.view_mut((ni, m), (no, m)).copy_from(&(linalg::scale_cols(&svd.u, &gm) * -r2));
    p.view_mut((0, 2 * m), (ni, k)).copy_from(&svd.v_perp);
    p.view_mut((ni, 2 * m), (no, k)).copy_from(&svd.u_perp);
    let mut eig = sp.s_lambda.clone();
    eig.extend(sp.s_lambda.iter().map(|s| -s));
    eig.extend(std::iter::repeat_n(sp.lambda_perp, k));
    (p, eig)
}

/// Everything the closed form needs: task frame, spectrum of `F` and the
/// initialisation statistics `B`, `C`, `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactContext {
    pub svd: TaskSvd,
    pub lambda: f64,
    pub spectrum: Spectrum,
    /// `B = W2(0)ᵀŨ(G̃ + H̃G̃) + W1(0)Ṽ(G̃ − H̃G̃)`.
    pub b: Mat,
    /// `C = W2(0)ᵀŨ(G̃ − H̃G̃) − W1(0)Ṽ(G̃ + H̃G̃)`.
    pub c: Mat,
    /// `D = W2(0)ᵀŨ⊥ + W1(0)Ṽ⊥`.
    pub d: Mat,
    pub w1_0: Mat,
    pub w2_0: Mat,
    pub tau: f64,
}

pub fn build_context(
    svd: &TaskSvd,
    params0: &NetworkParams,
    lambda: f64,
    tau: f64,
) -> Result<ExactContext> {
    if params0.n_in() != svd.n_in() || params0.n_out() != svd.n_out() {
        return Err(Error::Dimension("network and task widths differ".into()));
    }
    if params0.n_h() < svd.rank() {
        return Err(Error::Bottleneck { n_h: params0.n_h(), min: svd.rank() });
    }
    if !(tau > 0.0) {
        return Err(Error::Precondition("tau must be positive".into()));
    }
    let deviation = BalanceReport::new(params0).deviation_from(lambda);
    if !(deviation <= BALANCE_TOL) {
        return Err(Error::BalanceMismatch { lambda, deviation });
    }
    let spectrum = Spectrum::new(svd, lambda);
    let (gm, gp) = (spectrum.g_minus(), spectrum.g_plus());
    let w2t_u = params0.w2.transpose() * &svd.u;
    let w1_v = &params0.w1 * &svd.v;
    let b = linalg::scale_cols(&w2t_u, &gp) + linalg::scale_cols(&w1_v, &gm);
    let c = linalg::scale_cols(&w2t_u, &gm) - linalg::scale_cols(&w1_v, &gp);
    let d = params0.w2.transpose() * &svd.u_perp + &params0.w1 * &svd.v_perp;
    Ok(ExactContext {
        svd: svd.clone(),
        lambda,
        spectrum,
        b,
        c,
        d,
        w1_0: params0.w1.clone(),
        w2_0: params0.w2.clone(),
        tau,
    })
}

/// `(e^{2λ⊥t} − 1)/(2λ⊥)`, or `t` when `λ⊥ = 0`.
fn perp_integral(lambda_perp: f64, t: f64) -> f64 {
    if lambda_perp == 0.0 {
        t
    } else {
        (2.0 * lambda_perp * t).exp_m1() / (2.0 * lambda_perp)
    }
}

/// `e^{−(a+b)t} (e^{2λ⊥t} − 1)/(2λ⊥)` without forming the growing factor.
fn damped_perp_integral(lambda_perp: f64, a: f64, b: f64, t: f64) -> f64 {
    let decay = -(a + b) * t;
    if lambda_perp == 0.0 {
        t * decay.exp()
    } else if 2.0 * lambda_perp * t < 40.0 {
        decay.exp() * (2.0 * lambda_perp * t).exp_m1() / (2.0 * lambda_perp)
    } else {
        (decay + 2.0 * lambda_perp * t).exp() * -(-2.0 * lambda_perp * t).exp_m1()
            / (2.0 * lambda_perp)
    }
}

impl ExactContext {
    pub fn n_in(&self) -> usize {
        self.svd.n_in()
    }

    pub fn n_out(&self) -> usize {
        self.svd.n_out()
    }

    fn stack(&self, z1: Mat, z2: Mat) -> Mat {
        let (ni, no) = (self.n_in(), self.n_out());
        let mut z = Mat::zeros(ni + no, z1.ncols());
        z.rows_mut(0, ni).copy_from(&z1);
        z.rows_mut(ni, no).copy_from(&z2);
        z
    }

    /// `Z(t) = [Z1; Z2]` and `A(t)` at scaled time `tt = t/τ`.
    pub fn z_and_a(&self, tt: f64) -> (Mat, Mat) {
        let sp = &self.spectrum;
        let (gm, gp) = (sp.g_minus(), sp.g_plus());
        let grow: Vec<f64> = sp.s_lambda.iter().map(|s| (s * tt).exp()).collect();
        let decay: Vec<f64> = sp.s_lambda.iter().map(|s| (-s * tt).exp()).collect();
        let mul = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| 0.5 * x * y).collect()
        };
        let bt = self.b.transpose();
        let ct = self.c.transpose();
        let e_perp = (sp.lambda_perp * tt).exp();
        let z1 = linalg::scale_cols(&self.svd.v, &mul(&gm, &grow)) * &bt
            - linalg::scale_cols(&self.svd.v, &mul(&gp, &decay)) * &ct
            + &self.svd.v_perp * self.d.transpose() * e_perp;
        let z2 = linalg::scale_cols(&self.svd.u, &mul(&gp, &grow)) * &bt
            + linalg::scale_cols(&self.svd.u, &mul(&gm, &decay)) * &ct
            + &self.svd.u_perp * self.d.transpose() * e_perp;
        let fb: Vec<f64> =
            sp.s_lambda.iter().map(|s| (2.0 * s * tt).exp_m1() / (4.0 * s)).collect();
        let fc: Vec<f64> =
            sp.s_lambda.iter().map(|s| -(-2.0 * s * tt).exp_m1() / (4.0 * s)).collect();
        let n = self.b.nrows();
        let a = Mat::identity(n, n)
            + linalg::scale_cols(&self.b, &fb) * &bt
            + linalg::scale_cols(&self.c, &fc) * &ct
            + &self.d * self.d.transpose() * perp_integral(sp.lambda_perp, tt);
        (self.stack(z1, z2), a)
    }
}

/// Closed-form `QQᵀ(t)`.
pub fn qqt_exact(ctx: &ExactContext, t: f64) -> Result<Qqt> {
    if t < 0.0 {
        return Err(Error::Precondition("t must be non-negative".into()));
    }
    let (z, a) = ctx.z_and_a(t / ctx.tau);
    if !linalg::is_finite(&z) {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let cond = linalg::condition_number(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let x = linalg::solve(&a, &z.transpose()).ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(Qqt::new(linalg::symmetrize(&(&z * x)), ctx.n_in(), ctx.n_out()))
}

/// Closed form rewritten with `Ẑ = Z B⁻ᵀ e^{−S̃_λ t}` so that only decaying
/// exponentials appear. Needs a square invertible `B`.
pub fn qqt_exact_stable(ctx: &ExactContext, t: f64) -> Result<Qqt> {
    if t < 0.0 {
        return Err(Error::Precondition("t must be non-negative".into()));
    }
    let n = ctx.b.nrows();
    if ctx.b.ncols() != n {
        return Err(Error::SingularB(0.0));
    }
    let smin = linalg::singular_values(&ctx.b).last().copied().unwrap_or(0.0);
    if !(smin > MIN_B_SINGULAR) {
        return Err(Error::SingularB(smin));
    }
    let tt = t / ctx.tau;
    let sp = &ctx.spectrum;
    let s = &sp.s_lambda;
    let (gm, gp) = (sp.g_minus(), sp.g_plus());
    let binv = ctx.b.clone().try_inverse().ok_or(Error::SingularB(smin))?;
    let binv_t = binv.transpose();
    let decay: Vec<f64> = s.iter().map(|x| (-x * tt).exp()).collect();
    let fc: Vec<f64> = s.iter().map(|x| -(-2.0 * x * tt).exp_m1() / (4.0 * x)).collect();

    // e^{−St} Cᵀ B⁻ᵀ e^{−St}
    let m1 = linalg::scale_rows(&linalg::scale_cols(&(ctx.c.transpose() * &binv_t), &decay), &decay);
    // e^{λ⊥t} Dᵀ B⁻ᵀ e^{−St}, column j carrying e^{(λ⊥ − S_j)t}
    let perp_decay: Vec<f64> = s.iter().map(|x| ((sp.lambda_perp - x) * tt).exp()).collect();
    let k = linalg::scale_cols(&(ctx.d.transpose() * &binv_t), &perp_decay);

    let half = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 0.5 * x).collect() };
    let z1 = linalg::scale_cols(&ctx.svd.v, &half(&gm))
        - linalg::scale_cols(&ctx.svd.v, &half(&gp)) * &m1
        + &ctx.svd.v_perp * &k;
    let z2 = linalg::scale_cols(&ctx.svd.u, &half(&gp))
        + linalg::scale_cols(&ctx.svd.u, &half(&gm)) * &m1
        + &ctx.svd.u_perp * &k;

    let binv_c = &binv * &ctx.c;
    let term_i = linalg::scale_rows(&linalg::scale_cols(&(&binv * &binv_t), &decay), &decay);
    let term_c = linalg::scale_rows(
        &linalg::scale_cols(&(linalg::scale_cols(&binv_c, &fc) * binv_c.transpose()), &decay),
        &decay,
    );
    let kd = &binv * &ctx.d * ctx.d.transpose() * &binv_t;
    let term_d = Mat::from_fn(n, n, |i, j| {
        kd[(i, j)] * damped_perp_integral(sp.lambda_perp, s[i], s[j], tt)
    });
    let mut a_hat = term_i + term_c + term_d;
    for i in 0..n {
        a_hat[(i, i)] += -(-2.0 * s[i] * tt).exp_m1() / (4.0 * s[i]);
    }
    let z = ctx.stack(z1, z2);
    let x = linalg::solve(&a_hat, &z.transpose()).ok_or(Error::IllConditioned(f64::INFINITY))?;
    Ok(Qqt::new(linalg::symmetrize(&(&z * x)), ctx.n_in(), ctx.n_out()))
}

/// Stable form when `B` allows it, plain closed form otherwise.
pub fn qqt_at(ctx: &ExactContext, t: f64) -> Result<Qqt> {
    match qqt_exact_stable(ctx, t) {
        Err(Error::SingularB(_)) => qqt_exact(ctx, t),
        other => other,
    }
}

/// Closed-form trajectory sampled at `times`, recorded like a simulation.
pub fn exact_trajectory(ctx: &ExactContext, stats: &DataStats, times: &[f64]) -> Result<Trajectory> {
    let q0 = qqt_at(ctx, 0.0)?;
    let mut traj = Trajectory::default();
    for (i, &t) in times.iter().enumerate() {
        let q = qqt_at(ctx, t)?;
        let w2w1 = q.w2w1();
        traj.steps.push(i);
        traj.times.push(t);
        traj.losses.push(analysis::loss_from_network(&w2w1, stats));
        traj.network_svals.push(linalg::singular_values(&w2w1));
        traj.ntk_distance.push(analysis::kernel_distance_whitened(&q0, &q).unwrap_or(f64::NAN));
        traj.qqt.push(q);
    }
    Ok(traj)
}

/// Initial and target singular values of one mode, with `λ` and `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub s0: f64,
    pub s_target: f64,
    pub lambda: f64,
    pub tau: f64,
}

/// Fraction `γ(t; λ)` of the way from `s0` to `s_target`.
pub fn transition_gamma(p: &TransitionParams, t: f64) -> f64 {
    let tt = t / p.tau;
    let (s0, st, l2) = (p.s0, p.s_target, p.lambda * p.lambda / 4.0);
    let st_l = (st * st + l2).sqrt();
    let s_l = (s0 * s0 + l2).sqrt();
    let a = st_l * s_l;
    let k = st * s0 + l2;
    // Numerator and denominator divided by e^{2 S̃_λ t}/2.
    let x = 2.0 * st_l * tt;
    let e1 = (-x).exp();
    let om1 = -(-x).exp_m1();
    let om2 = -(-2.0 * x).exp_m1();
    let num = a * om2 + k * om1 * om1;
    let den = a * om2 + k * (1.0 + e1 * e1) + 2.0 * st * (st - s0) * e1;
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `s(t) = s0 + γ(t; λ)(s_target − s0)`.
pub fn singular_value_at(p: &TransitionParams, t: f64) -> f64 {
    p.s0 + transition_gamma(p, t) * (p.s_target - p.s0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `λ → 0`: `(e^{2s̃t} − 1)/(e^{2s̃t} − 1 + s̃/s0)`.
    Sigmoidal,
    /// `λ → ±∞`: `1 − e^{−|λ|t}`.
    Exponential,
}

pub fn transition_limit(p: &TransitionParams, t: f64, regime: Regime) -> Result<f64> {
    let tt = t / p.tau;
    match regime {
        Regime::Sigmoidal => {
            if !(p.s0 > 0.0) {
                return Err(Error::Precondition("sigmoidal limit needs s0 > 0".into()));
            }
            let x = 2.0 * p.s_target * tt;
            let om = -(-x).exp_m1();
            Ok(om / (om + (p.s_target / p.s0) * (-x).exp()))
        }
        Regime::Exponential => Ok(-(-p.lambda.abs() * tt).exp_m1()),
    }
}

/// Per-layer singular values `S1 = √(S_λ − λ/2)` (length n_in) and
/// `S2 = √(S_λ + λ/2)` (length n_out), zero beyond the shared block.
pub fn recover_layer_singulars(
    s_vals: &[f64],
    lambda: f64,
    n_in: usize,
    n_out: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if s_vals.len() != n_in.min(n_out) {
        return Err(Error::Dimension(format!(
            "expected {} singular values, got {}",
            n_in.min(n_out),
            s_vals.len()
        )));
    }
    if let Some(&bad) = s_vals.iter().find(|&&s| !(s > 1e-12)) {
        return Err(Error::RankDeficient(bad));
    }
    let (mut s1, mut s2) = init::balanced_split(s_vals, lambda);
    s1.resize(n_in, 0.0);
    s2.resize(n_out, 0.0);
    Ok((s1, s2))
}

/// Converged `QQᵀ`: `[[Ṽ S1² Ṽᵀ, Ṽ S̃ Ũᵀ], [Ũ S̃ Ṽᵀ, Ũ S2² Ũᵀ]]`.
pub fn limit_qqt(svd: &TaskSvd, lambda: f64) -> Qqt {
    let (s1, s2) = init::balanced_split(&svd.s, lambda);
    let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
    let w1tw1 = linalg::scale_cols(&svd.v, &sq(&s1)) * svd.v.transpose();
    let w2w2t = linalg::scale_cols(&svd.u, &sq(&s2)) * svd.u.transpose();
    Qqt::from_blocks(&w1tw1, &svd.sigma_yx(), &w2w2t)
}

/// Leading-order converged blocks `(W1ᵀW1, W2W2ᵀ)` for large `|λ|`:
/// `(ṼS̃²Ṽᵀ/λ, λŨŨᵀ)` for λ > 0 and `(|λ|ṼṼᵀ, ŨS̃²Ũᵀ/|λ|)` for λ < 0.
pub fn asymptotic_representation(svd: &TaskSvd, lambda: f64) -> Result<(Mat, Mat)> {
    if lambda == 0.0 {
        return Err(Error::Precondition("asymptotic form needs lambda != 0".into()));
    }
    let l = lambda.abs();
    let s2: Vec<f64> = svd.s.iter().map(|s| s * s / l).collect();
    let task_v = linalg::scale_cols(&svd.v, &s2) * svd.v.transpose();
    let task_u = linalg::scale_cols(&svd.u, &s2) * svd.u.transpose();
    Ok(if lambda > 0.0 {
        (task_v, &svd.u * svd.u.transpose() * l)
    } else {
        (&svd.v * svd.v.transpose() * l, task_u)
    })
}

/// Rates of the delayed-rich phase: the fast lazy rate `min S̃_λ` and the slow
/// rich rate `min (S̃_λ − λ⊥)`, which behaves like `s̃²/λ` for large λ.
pub fn delayed_rich_rates(ctx: &ExactContext) -> Result<(f64, f64)> {
    let sp = &ctx.spectrum;
    if !(sp.lambda_perp > 0.0) {
        return Err(Error::Precondition(format!(
            "delayed-rich phase needs lambda_perp > 0 (got {})",
            sp.lambda_perp
        )));
    }
    let fast = sp.s_lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let slow = sp
        .s_lambda
        .iter()
        .zip(&ctx.svd.s)
        .map(|(sl, s)| {
            // S_λ − λ/2 = s²/(S_λ + λ/2) avoids cancellation at large λ.
            s * s / (sl + sp.lambda_perp)
        })
        .fold(f64::INFINITY, f64::min);
    Ok((fast, slow))
}

/// Network aligned with the task frame: `W1 = R S1 Ṽᵀ`, `W2 = Ũ S2 Rᵀ` with
/// `S1 S2 = diag(s0)` split lambda-balanced.
pub fn task_aligned_init(svd: &TaskSvd, s0: &[f64], lambda: f64, r: &Mat) -> Result<NetworkParams> {
    let join = |a: &Mat, b: &Mat| -> Mat {
        let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
        out.columns_mut(0, a.ncols()).copy_from(a);
        out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
        out
    };
    let u_full = if svd.n_out() > svd.n_in() { join(&svd.u, &svd.u_perp) } else { svd.u.clone() };
    let v_full = if svd.n_in() > svd.n_out() { join(&svd.v, &svd.v_perp) } else { svd.v.clone() };
    init::compose_balanced(&u_full, s0, &v_full, r, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::lambda_balanced_init;
    use crate::tasks::{compute_statistics, make_random_regression, task_svd};

    fn setup(dims: (usize, usize, usize), lambda: f64, seed: u64) -> ExactContext {
        let task = make_random_regression(dims.0, dims.2, 10, 10f64.sqrt(), seed).unwrap();
        let svd = task_svd(&compute_statistics(&task)).unwrap();
        let p = lambda_balanced_init(lambda, dims.0, dims.1, dims.2, 1.0, seed + 100).unwrap();
        build_context(&svd, &p, lambda, 1.0).unwrap()
    }

    #[test]
    fn eigendecomposition_reconstructs_f() {
        for dims in [(2, 2, 2), (3, 2, 2), (2, 2, 3)] {
            for lambda in [-2.0, 0.0, 2.0] {
                let ctx = setup(dims, lambda, 1);
                let (p, e) = eigen_f(&ctx.svd, lambda);
                let n = p.nrows();
                assert!(linalg::max_abs_diff(&(p.transpose() * &p), &Mat::identity(n, n)) < 1e-9);
                let rec = linalg::scale_cols(&p, &e) * p.transpose();
                assert!(linalg::max_abs_diff(&rec, &build_f(&ctx.svd, lambda)) < 1e-9);
            }
        }
    }

    #[test]
    fn initial_condition_is_reproduced() {
        for lambda in [-2.0, 0.0, 2.0] {
            let ctx = setup((3, 2, 2), lambda, 2);
            let p0 = NetworkParams::new(ctx.w1_0.clone(), ctx.w2_0.clone()).unwrap();
            let q0 = Qqt::from_params(&p0);
            assert!(linalg::max_abs_diff(&qqt_exact(&ctx, 0.0).unwrap().m, &q0.m) < 1e-10);
            assert!(linalg::max_abs_diff(&qqt_exact_stable(&ctx, 0.0).unwrap().m, &q0.m) < 1e-10);
        }
    }

    #[test]
    fn spectrum_identity() {
        let ctx = setup((3, 3, 3), 1.7, 3);
        let sp = &ctx.spectrum;
        for i in 0..3 {
            let lhs = sp.g[i] * sp.g[i] * (1.0 - sp.h[i] * sp.h[i]) * sp.s_lambda[i];
            assert!((lhs - ctx.svd.s[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_lambda_reduces() {
        let ctx = setup((2, 2, 2), 0.0, 4);
        assert!(ctx.spectrum.h.iter().all(|&h| h == 0.0));
        assert!(ctx.spectrum.g.iter().all(|&g| g == 1.0));
        assert_eq!(ctx.spectrum.lambda_perp, 0.0);
        assert_eq!(ctx.d.ncols(), 0);
    }

    #[test]
    fn unbalanced_start_is_rejected() {
        let task = make_random_regression(3, 2, 10, 1.0, 0).unwrap();
        let svd = task_svd(&compute_statistics(&task)).unwrap();
        let p = lambda_balanced_init(1.0, 3, 2, 2, 1.0, 0).unwrap();
        assert!(matches!(build_context(&svd, &p, 0.0, 1.0), Err(Error::BalanceMismatch { .. })));
    }

    #[test]
    fn delayed_rich_rate_example() {
        let svd = TaskSvd::from_matrix(&Mat::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let p = task_aligned_init(&svd, &[0.1], 8.0, &Mat::identity(1, 1)).unwrap();
        let ctx = build_context(&svd, &p, 8.0, 1.0).unwrap();
        let (fast, slow) = delayed_rich_rates(&ctx).unwrap();
        assert!((slow - (17f64.sqrt() - 4.0)).abs() < 1e-12);
        assert!((slow - 0.125).abs() / 0.125 < 0.1);
        assert!((fast - 17f64.sqrt()).abs() < 1e-12);
        let p = task_aligned_init(&svd, &[0.1], -8.0, &Mat::identity(1, 1)).unwrap();
        let ctx = build_context(&svd, &p, -8.0, 1.0).unwrap();
        assert!(delayed_rich_rates(&ctx).is_err());
    }
}
