//! Balance of random initialisation schemes, and noise sensitivity of
//! converged networks.

use lindyn::analysis::{self, McEstimate};
use lindyn::exact;
use lindyn::init::{self, BalanceAudit, Scheme, SchemeSpec};
use lindyn::linalg::Mat;
use lindyn::par::Mode;
use lindyn::tasks;
use serde::Serialize;

use super::{task_for, Arch};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{num, sub_seed, Artifact};
use crate::RunError;

/// Input width of the spot-check networks; hidden width equals it (k = 1).
pub const SPOT_N: usize = 20;
pub const SPOT_RATIOS: [f64; 3] = [0.1, 1.0, 10.0];
/// Stand-ins for 0 and ∞ when approaching the limit cases.
const TINY: f64 = 1e-9;
const HUGE: f64 = 1e9;

fn parse_scheme(name: &str) -> Result<Scheme, ConfigError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "lecun" => Ok(Scheme::LeCun),
        "glorot" => Ok(Scheme::Glorot),
        "he" => Ok(Scheme::He),
        "scaled" => Ok(Scheme::Scaled),
        other => Err(ConfigError::Field {
            field: "schemes".into(),
            message: format!("unknown scheme '{other}' (lecun, glorot, he, scaled)"),
        }),
    }
}

pub struct AuditSettings {
    pub specs: Vec<SchemeSpec>,
    pub trials: usize,
}

impl AuditSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        let trials = cfg.param_usize("trials")?;
        if trials < 2 {
            return Err(ConfigError::Field { field: "trials".into(), message: "need at least 2".into() });
        }
        let mut specs = Vec::new();
        for name in cfg.param_str("schemes")?.split(',').filter(|s| !s.trim().is_empty()) {
            specs.push(match parse_scheme(name)? {
                Scheme::Scaled => {
                    let a = cfg.param_list("alphas")?;
                    if a.len() != 2 {
                        return Err(ConfigError::Field {
                            field: "alphas".into(),
                            message: "scaled needs two alphas, first layer then second".into(),
                        });
                    }
                    SchemeSpec::scaled(a[0], a[1])
                }
                s => SchemeSpec::new(s),
            });
        }
        if specs.is_empty() {
            return Err(ConfigError::Field { field: "schemes".into(), message: "is empty".into() });
        }
        Ok(AuditSettings { specs, trials })
    }
}

/// Expected balance with `N_h = kN_i`, `N_o = rN_i`, as a function of the
/// ratios alone.
pub fn ratio_expectation(spec: SchemeSpec, k: f64, r: f64) -> f64 {
    let (a1, a2) = spec.alphas.unwrap_or((1.0, 1.0));
    match spec.scheme {
        Scheme::LeCun => r / k - 1.0,
        Scheme::Glorot => 2.0 * (r / (k + r) - 1.0 / (k + 1.0)),
        Scheme::He => 2.0 * (r / k - 1.0),
        Scheme::Scaled => r / k * a2 * a2 - a1 * a1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitCase {
    REqualsK,
    RToZero,
    RToInfinity,
    KToInfinity,
    KToZero,
    AlphaRatio,
}

pub const LIMIT_CASES: [LimitCase; 6] = [
    LimitCase::REqualsK,
    LimitCase::RToZero,
    LimitCase::RToInfinity,
    LimitCase::KToInfinity,
    LimitCase::KToZero,
    LimitCase::AlphaRatio,
];

impl LimitCase {
    /// The (k, r) at which the case is evaluated, k = 1 or r = 1 held fixed.
    fn point(self, spec: SchemeSpec) -> (f64, f64) {
        let (a1, a2) = spec.alphas.unwrap_or((1.0, 1.0));
        match self {
            LimitCase::REqualsK => (1.0, 1.0),
            LimitCase::RToZero => (1.0, TINY),
            LimitCase::RToInfinity => (1.0, HUGE),
            LimitCase::KToInfinity => (HUGE, 1.0),
            LimitCase::KToZero => (TINY, 1.0),
            LimitCase::AlphaRatio => (1.0, a1 * a1 / (a2 * a2)),
        }
    }
}

/// The limiting-case table entry as printed; `None` where it has none.
pub fn printed_limit(spec: SchemeSpec, case: LimitCase, k: f64, r: f64) -> Option<f64> {
    use LimitCase::*;
    let (a1, a2) = spec.alphas.unwrap_or((1.0, 1.0));
    Some(match (spec.scheme, case) {
        (Scheme::LeCun | Scheme::Glorot | Scheme::He, AlphaRatio) => return None,
        (Scheme::LeCun, REqualsK) => 0.0,
        (Scheme::LeCun, RToZero | KToInfinity) => -1.0,
        (Scheme::LeCun, RToInfinity | KToZero) => r / k,
        (Scheme::Glorot, REqualsK | KToInfinity) => 0.0,
        (Scheme::Glorot, RToZero | RToInfinity) => 2.0,
        (Scheme::Glorot, KToZero) => -2.0 / (k + 1.0),
        (Scheme::He, REqualsK) => 0.0,
        (Scheme::He, RToZero | KToInfinity) => -2.0,
        (Scheme::He, RToInfinity | KToZero) => 2.0 * r / k,
        (Scheme::Scaled, REqualsK) => a2 * a2 - a1 * a1,
        (Scheme::Scaled, RToZero | KToInfinity) => -a1 * a1,
        (Scheme::Scaled, RToInfinity | KToZero) => r / k * a2 * a2,
        (Scheme::Scaled, AlphaRatio) => 0.0,
    })
}

/// The limit as it follows from the ratio expectation. Differs from the
/// printed entry only in the Glorot row.
pub fn derived_limit(spec: SchemeSpec, case: LimitCase, k: f64, r: f64) -> Option<f64> {
    use LimitCase::*;
    match (spec.scheme, case) {
        (Scheme::Glorot, REqualsK) => Some((k - 1.0) / (k + 1.0)),
        (Scheme::Glorot, RToZero) => Some(-2.0 / (k + 1.0)),
        (Scheme::Glorot, RToInfinity) => Some(2.0 * k / (k + 1.0)),
        (Scheme::Glorot, KToInfinity | KToZero) => Some(0.0),
        _ => printed_limit(spec, case, k, r),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeAudit {
    pub scheme: String,
    pub alphas: Option<(f64, f64)>,
    pub mc: BalanceAudit,
    pub expected_mean: f64,
    /// Variance coefficient: off-diagonal entries have variance `coef`,
    /// diagonal entries `2·coef`.
    pub coef: f64,
    /// |mean − expected| in standard errors.
    pub z_mean: f64,
    pub var_offdiag_rel_err: f64,
    pub var_diag_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpotCheck {
    pub scheme: String,
    pub k: f64,
    pub r: f64,
    pub dims: Arch,
    /// From the per-layer variances of these dims.
    pub expected: f64,
    /// From the ratio form.
    pub ratio_form: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitCheck {
    pub scheme: String,
    pub case: LimitCase,
    pub k: f64,
    pub r: f64,
    /// The ratio form at (k, r).
    pub value: f64,
    pub printed: Option<f64>,
    pub derived: Option<f64>,
    /// |value − reference| / max(1, |reference|).
    pub printed_err: Option<f64>,
    pub derived_err: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub dims: Arch,
    pub trials: usize,
    pub schemes: Vec<SchemeAudit>,
    pub spots: Vec<SpotCheck>,
    pub limits: Vec<LimitCheck>,
}

fn z_score(diff: f64, stderr: f64) -> f64 {
    // A zero standard error means every draw agreed; allow rounding only.
    diff.abs() / stderr.max(1e-12)
}

pub fn audit_scheme(spec: SchemeSpec, dims: Arch, trials: usize, seed: u64) -> Result<SchemeAudit, RunError> {
    let mc = init::monte_carlo_balance(spec, dims, trials, seed)?;
    let (expected_mean, coef) = init::expected_balance(spec, dims.0, dims.1, dims.2)?;
    Ok(SchemeAudit {
        scheme: spec.scheme.name().into(),
        alphas: spec.alphas,
        mc,
        expected_mean,
        coef,
        z_mean: z_score(mc.mean_lambda - expected_mean, mc.stderr_mean),
        var_offdiag_rel_err: (mc.var_offdiag - coef).abs() / coef,
        var_diag_rel_err: (mc.var_diag - 2.0 * coef).abs() / (2.0 * coef),
    })
}

pub fn run_audit(cfg: &ExperimentConfig) -> Result<AuditReport, RunError> {
    let s = AuditSettings::parse(cfg)?;
    let mut schemes = Vec::new();
    let mut spots = Vec::new();
    let mut limits = Vec::new();
    for &spec in &s.specs {
        let name = spec.scheme.name().to_string();
        schemes.push(audit_scheme(spec, cfg.dims, s.trials, sub_seed(cfg.seed, &name, 0.0, cfg.dims, 0))?);
        for (j, &ratio) in SPOT_RATIOS.iter().enumerate() {
            let dims = (SPOT_N, SPOT_N, (ratio * SPOT_N as f64).round() as usize);
            let seed = sub_seed(cfg.seed, &format!("spot_{name}"), 0.0, dims, j as u64);
            let mc = init::monte_carlo_balance(spec, dims, s.trials, seed)?;
            let (expected, _) = init::expected_balance(spec, dims.0, dims.1, dims.2)?;
            spots.push(SpotCheck {
                scheme: name.clone(),
                k: 1.0,
                r: ratio,
                dims,
                expected,
                ratio_form: ratio_expectation(spec, 1.0, ratio),
                mc_mean: mc.mean_lambda,
                mc_stderr: mc.stderr_mean,
                z: z_score(mc.mean_lambda - expected, mc.stderr_mean),
            });
        }
        for case in LIMIT_CASES {
            let (k, r) = case.point(spec);
            let value = ratio_expectation(spec, k, r);
            let rel = |reference: Option<f64>| reference.map(|x| (value - x).abs() / x.abs().max(1.0));
            let printed = printed_limit(spec, case, k, r);
            let derived = derived_limit(spec, case, k, r);
            limits.push(LimitCheck {
                scheme: name.clone(),
                case,
                k,
                r,
                value,
                printed,
                derived,
                printed_err: rel(printed),
                derived_err: rel(derived),
            });
        }
    }
    Ok(AuditReport { dims: cfg.dims, trials: s.trials, schemes, spots, limits })
}

impl AuditReport {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let header: Vec<String> =
            ["scheme", "dims", "mean_lambda", "stderr", "expected", "var_diag", "var_offdiag", "coef"]
                .map(String::from)
                .to_vec();
        let mut rows: Vec<Vec<String>> = self
            .schemes
            .iter()
            .map(|a| {
                vec![
                    a.scheme.clone(),
                    crate::output::arch_name(self.dims),
                    num(a.mc.mean_lambda),
                    num(a.mc.stderr_mean),
                    num(a.expected_mean),
                    num(a.mc.var_diag),
                    num(a.mc.var_offdiag),
                    num(a.coef),
                ]
            })
            .collect();
        rows.extend(self.spots.iter().map(|sp| {
            vec![
                sp.scheme.clone(),
                crate::output::arch_name(sp.dims),
                num(sp.mc_mean),
                num(sp.mc_stderr),
                num(sp.expected),
                String::new(),
                String::new(),
                String::new(),
            ]
        }));
        vec![Artifact::csv("balance.csv", &header, &rows), Artifact::json("audit.json", self)]
    }
}

pub struct NoiseSettings {
    pub trials: usize,
    pub noise: Vec<f64>,
}

impl NoiseSettings {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.param_usize("samples")?;
        cfg.param_f64("sigma_y")?;
        let trials = cfg.param_usize("trials")?;
        if trials < 2 {
            return Err(ConfigError::Field { field: "trials".into(), message: "need at least 2".into() });
        }
        let noise = cfg.param_list("noise")?;
        if noise.is_empty() || noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(ConfigError::Field { field: "noise".into(), message: "levels must be non-negative".into() });
        }
        Ok(NoiseSettings { trials, noise })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NoisePoint {
    pub lambda: f64,
    pub sigma: f64,
    /// Closed forms including the task's irreducible loss.
    pub input_closed: f64,
    pub input_mc: McEstimate,
    pub input_z: f64,
    pub param_closed: f64,
    pub param_mc: McEstimate,
    pub param_z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseLevel {
    pub sigma: f64,
    /// λ with the smallest closed-form parameter-noise loss, and whether
    /// every other λ is strictly worse.
    pub param_argmin: f64,
    pub param_min_unique: bool,
    /// Max − min over λ of the input-noise loss, closed form and Monte Carlo.
    pub input_spread_closed: f64,
    pub input_spread_mc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseReport {
    pub arch: Arch,
    pub s_target: Vec<f64>,
    pub loss_floor: f64,
    pub points: Vec<NoisePoint>,
    pub levels: Vec<NoiseLevel>,
}

/// Perturbs converged task-aligned networks. Input noise reuses the same
/// draws for every λ, so any difference across λ would come from the network
/// function itself.
pub fn run_noise(cfg: &ExperimentConfig) -> Result<NoiseReport, RunError> {
    let s = NoiseSettings::parse(cfg)?;
    let arch = cfg.dims;
    let task = task_for(cfg, arch, 0)?;
    let stats = tasks::compute_statistics(&task);
    let svd = tasks::task_svd(&stats)?;
    let floor = stats.loss_floor();
    let mut jobs = Vec::new();
    for (j, &sigma) in s.noise.iter().enumerate() {
        for &lambda in &cfg.lambda_list {
            jobs.push((j as u64, sigma, lambda));
        }
    }
    let mode = Mode::default();
    let points = lindyn::par::map(jobs, |(j, sigma, lambda)| -> Result<NoisePoint, RunError> {
        let p = exact::task_aligned_init(&svd, &svd.s, lambda, &Mat::identity(arch.1, arch.1))?;
        let input_closed = floor + analysis::expected_loss_input_noise(&svd.s, sigma);
        let input_seed = sub_seed(cfg.seed, "input_noise", 0.0, arch, j);
        let input_mc = analysis::monte_carlo_input_noise(mode, &p.product(), &task, sigma, s.trials, input_seed);
        let param_closed = floor + analysis::expected_loss_param_noise(&svd.s, lambda, arch, sigma);
        let param_seed = sub_seed(cfg.seed, "param_noise", lambda, arch, j);
        let param_mc = analysis::monte_carlo_param_noise(mode, &p, &task, sigma, s.trials, param_seed);
        Ok(NoisePoint {
            lambda,
            sigma,
            input_closed,
            input_z: z_score(input_mc.mean - input_closed, input_mc.stderr),
            input_mc,
            param_closed,
            param_z: z_score(param_mc.mean - param_closed, param_mc.stderr),
            param_mc,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let levels = s
        .noise
        .iter()
        .map(|&sigma| {
            let at: Vec<&NoisePoint> = points.iter().filter(|p| p.sigma == sigma).collect();
            let best = at.iter().min_by(|a, b| a.param_closed.total_cmp(&b.param_closed)).expect("non-empty grid");
            let spread = |f: &dyn Fn(&NoisePoint) -> f64| {
                let v: Vec<f64> = at.iter().map(|p| f(p)).collect();
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
            };
            NoiseLevel {
                sigma,
                param_argmin: best.lambda,
                param_min_unique: at
                    .iter()
                    .filter(|p| p.lambda != best.lambda)
                    .all(|p| p.param_closed > best.param_closed),
                input_spread_closed: spread(&|p| p.input_closed),
                input_spread_mc: spread(&|p| p.input_mc.mean),
            }
        })
        .collect();
    Ok(NoiseReport { arch, s_target: svd.s.clone(), loss_floor: floor, points, levels })
}

impl NoiseReport {
    pub fn artifacts(&self) -> Vec<Artifact> {
        let header: Vec<String> = [
            "lambda",
            "sigma",
            "input_closed",
            "input_mc",
            "input_stderr",
            "param_closed",
            "param_mc",
            "param_stderr",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                vec![
                    num(p.lambda),
                    num(p.sigma),
                    num(p.input_closed),
                    num(p.input_mc.mean),
                    num(p.input_mc.stderr),
                    num(p.param_closed),
                    num(p.param_mc.mean),
                    num(p.param_mc.stderr),
                ]
            })
            .collect();
        vec![Artifact::csv("noise.csv", &header, &rows), Artifact::json("summary.json", self)]
    }
}
