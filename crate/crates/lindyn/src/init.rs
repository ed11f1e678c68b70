//! Lambda-balanced and standard random initialisations, and diagnostics of
//! the balance matrix `W2ᵀW2 − W1W1ᵀ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::par::{self, Mode};

/// Weights of `ŷ = W2 W1 x`: `w1` is n_h × n_in, `w2` is n_out × n_h.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: Mat,
    pub w2: Mat,
}

impl NetworkParams {
    pub fn new(w1: Mat, w2: Mat) -> Result<Self> {
        if w2.ncols() != w1.nrows() {
            return Err(Error::Dimension(format!(
                "W2 is {}x{} but W1 is {}x{}",
                w2.nrows(),
                w2.ncols(),
                w1.nrows(),
                w1.ncols()
            )));
        }
        Ok(NetworkParams { w1, w2 })
    }

    pub fn n_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_h(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w2.nrows()
    }

    /// Network function `W2 W1`.
    pub fn product(&self) -> Mat {
        &self.w2 * &self.w1
    }
}

pub fn balance_matrix(params: &NetworkParams) -> Mat {
    params.w2.transpose() * &params.w2 - &params.w1 * params.w1.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub balance: Mat,
    /// Mean of the diagonal.
    pub lambda_hat: f64,
    pub max_offdiag: f64,
    /// Largest deviation of a diagonal entry from `lambda_hat`.
    pub max_diag_dev: f64,
}

impl BalanceReport {
    pub fn new(params: &NetworkParams) -> Self {
        let balance = balance_matrix(params);
        let n = balance.nrows();
        let lambda_hat = if n == 0 { 0.0 } else { balance.trace() / n as f64 };
        let mut max_offdiag: f64 = 0.0;
        let mut max_diag_dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    max_diag_dev = max_diag_dev.max((balance[(i, i)] - lambda_hat).abs());
                } else {
                    max_offdiag = max_offdiag.max(balance[(i, j)].abs());
                }
            }
        }
        BalanceReport { balance, lambda_hat, max_offdiag, max_diag_dev }
    }

    /// `‖balance − λI‖_max`.
    pub fn deviation_from(&self, lambda: f64) -> f64 {
        let n = self.balance.nrows();
        linalg::max_abs_diff(&self.balance, &(Mat::identity(n, n) * lambda))
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out {
            balance: Vec<Vec<f64>>,
            lambda_hat: f64,
            max_offdiag: f64,
            max_diag_dev: f64,
        }
        serde_json::to_string(&Out {
            balance: linalg::to_row_major(&self.balance),
            lambda_hat: self.lambda_hat,
            max_offdiag: self.max_offdiag,
            max_diag_dev: self.max_diag_dev,
        })
        .expect("report serialises")
    }
}

/// Checks whether a lambda-balanced network of these widths exists.
///
/// With `n_h = min(n_in, n_out)` every λ is reachable. Extra hidden units
/// beyond the shared block must carry `W2ᵀW2 = λ` alone (wide output side,
/// needs λ ≥ 0) or `W1W1ᵀ = −λ` alone (wide input side, needs λ ≤ 0), and
/// units beyond both widths need λ = 0.
pub fn check_balanced_dims(lambda: f64, n_in: usize, n_h: usize, n_out: usize) -> Result<()> {
    if n_in == 0 || n_h == 0 || n_out == 0 {
        return Err(Error::Dimension("dimensions must be positive".into()));
    }
    let min = n_in.min(n_out);
    if n_h < min {
        return Err(Error::Bottleneck { n_h, min });
    }
    if n_h > n_in.max(n_out) && lambda != 0.0 {
        return Err(Error::Sign(
            "hidden width exceeds both input and output widths, so lambda must be 0".into(),
        ));
    }
    if n_h > min {
        if n_out > n_in && lambda < 0.0 {
            return Err(Error::Sign(format!(
                "lambda must be >= 0 when n_out > n_in and n_h > n_in (got {lambda})"
            )));
        }
        if n_in > n_out && lambda > 0.0 {
            return Err(Error::Sign(format!(
                "lambda must be <= 0 when n_in > n_out and n_h > n_out (got {lambda})"
            )));
        }
    }
    Ok(())
}

/// Per-layer singular values of a lambda-balanced split of `s`:
/// `s1 = √((√(λ²+4s²) − λ)/2)`, `s2 = √((√(λ²+4s²) + λ)/2)`.
pub fn balanced_split(s: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut s1 = Vec::with_capacity(s.len());
    let mut s2 = Vec::with_capacity(s.len());
    for &si in s {
        let root = (lambda * lambda + 4.0 * si * si).sqrt();
        // For large |λ| the smaller factor suffers cancellation; recover it from s1·s2 = s.
        let (a, b) = if lambda >= 0.0 {
            let big = ((root + lambda) / 2.0).sqrt();
            (if big > 0.0 { si / big } else { 0.0 }, big)
        } else {
            let big = ((root - lambda) / 2.0).sqrt();
            (big, if big > 0.0 { si / big } else { 0.0 })
        };
        s1.push(a);
        s2.push(b);
    }
    (s1, s2)
}

/// Builds `W2 = U S2 Rᵀ`, `W1 = R S1 Vᵀ` from a network function `U diag(s) Vᵀ`
/// with full bases `u_full` (n_out × n_out) and `v_full` (n_in × n_in), filling the
/// hidden units beyond the shared block so that the balance is exactly λI.
pub fn compose_balanced(
    u_full: &Mat,
    s: &[f64],
    v_full: &Mat,
    r: &Mat,
    lambda: f64,
) -> Result<NetworkParams> {
    let n_out = u_full.nrows();
    let n_in = v_full.nrows();
    let n_h = r.nrows();
    check_balanced_dims(lambda, n_in, n_h, n_out)?;
    let m = n_in.min(n_out);
    if s.len() != m {
        return Err(Error::Dimension(format!("expected {m} singular values, got {}", s.len())));
    }
    let (s1, s2) = balanced_split(s, lambda);
    let mut big_s2 = Mat::zeros(n_out, n_h);
    let mut big_s1 = Mat::zeros(n_h, n_in);
    for k in 0..m {
        big_s2[(k, k)] = s2[k];
        big_s1[(k, k)] = s1[k];
    }
    for k in m..n_h {
        if k < n_out {
            big_s2[(k, k)] = lambda.max(0.0).sqrt();
        }
        if k < n_in {
            big_s1[(k, k)] = (-lambda).max(0.0).sqrt();
        }
    }
    let w2 = u_full * big_s2 * r.transpose();
    let w1 = r * big_s1 * v_full.transpose();
    NetworkParams::new(w1, w2)
}

/// `[q q⊥]`: extends orthonormal columns to a full orthonormal basis.
pub fn complete_basis(q: &Mat) -> Mat {
    let c = linalg::orth_complement(q);
    let mut full = Mat::zeros(q.nrows(), q.ncols() + c.ncols());
    full.columns_mut(0, q.ncols()).copy_from(q);
    full.columns_mut(q.ncols(), c.ncols()).copy_from(&c);
    full
}

/// Lambda-balanced initialisation.
///
/// Draws a Gaussian pair of scale `sigma`, keeps the SVD `U S Vᵀ` of its
/// product and redistributes `S` between the layers so that
/// `W2ᵀW2 − W1W1ᵀ = λI`, with a random orthogonal hidden frame `R`. The
/// network function is the product of the Gaussian pair.
pub fn lambda_balanced_init(
    lambda: f64,
    n_in: usize,
    n_h: usize,
    n_out: usize,
    sigma: f64,
    seed: u64,
) -> Result<NetworkParams> {
    if !(sigma > 0.0) {
        return Err(Error::Precondition("sigma must be positive".into()));
    }
    balanced_from_draw(lambda, (n_in, n_h, n_out), sigma, None, seed)
}

/// Lambda-balanced initialisation whose network function has Frobenius norm
/// `scale`: the draw of [`lambda_balanced_init`] with its singular values rescaled.
pub fn lambda_balanced_with_scale(
    lambda: f64,
    dims: (usize, usize, usize),
    scale: f64,
    seed: u64,
) -> Result<NetworkParams> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Precondition("scale must be positive".into()));
    }
    balanced_from_draw(lambda, dims, 1.0, Some(scale), seed)
}

fn balanced_from_draw(
    lambda: f64,
    dims: (usize, usize, usize),
    sigma: f64,
    scale: Option<f64>,
    seed: u64,
) -> Result<NetworkParams> {
    let (n_in, n_h, n_out) = dims;
    check_balanced_dims(lambda, n_in, n_h, n_out)?;
    let mut rng = linalg::rng(seed);
    let w1 = linalg::randn(n_h, n_in, &mut rng) * sigma;
    let w2 = linalg::randn(n_out, n_h, &mut rng) * sigma;
    let d = linalg::svd(&(&w2 * &w1));
    let r = linalg::random_orthogonal(n_h, &mut rng);
    let m = n_in.min(n_out);
    let mut s: Vec<f64> = d.s[..m].to_vec();
    if let Some(target) = scale {
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::RankDeficient(norm));
        }
        s.iter_mut().for_each(|x| *x *= target / norm);
    }
    let u = d.u.columns(0, m).into_owned();
    let v = d.v.columns(0, m).into_owned();
    let params = compose_balanced(&complete_basis(&u), &s, &complete_basis(&v), &r, lambda)?;
    let dev = BalanceReport::new(&params).deviation_from(lambda);
    let scale = 1.0 + lambda.abs() + s.first().copied().unwrap_or(0.0);
    assert!(dev <= 1e-12 * scale * 1e3, "balanced construction drifted by {dev:e}");
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    LeCun,
    Glorot,
    He,
    Scaled,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::LeCun => "lecun",
            Scheme::Glorot => "glorot",
            Scheme::He => "he",
            Scheme::Scaled => "scaled",
        }
    }
}

/// A random scheme; `alphas = (α1, α2)` scale the first and second layer and
/// are required for, and only for, [`Scheme::Scaled`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub alphas: Option<(f64, f64)>,
}

impl SchemeSpec {
    pub fn new(scheme: Scheme) -> Self {
        SchemeSpec { scheme, alphas: None }
    }

    pub fn scaled(alpha1: f64, alpha2: f64) -> Self {
        SchemeSpec { scheme: Scheme::Scaled, alphas: Some((alpha1, alpha2)) }
    }

    fn validate(&self) -> Result<()> {
        match (self.scheme, self.alphas) {
            (Scheme::Scaled, None) => Err(Error::MissingAlphas("scaled")),
            (Scheme::Scaled, Some(_)) => Ok(()),
            (s, Some(_)) => Err(Error::UnexpectedAlphas(s.name())),
            (_, None) => Ok(()),
        }
    }

    /// Entry variances `(var(W1), var(W2))`.
    pub fn layer_variances(&self, n_in: usize, n_h: usize, n_out: usize) -> Result<(f64, f64)> {
        self.validate()?;
        let (ni, nh, no) = (n_in as f64, n_h as f64, n_out as f64);
        Ok(match self.scheme {
            Scheme::LeCun => (1.0 / ni, 1.0 / nh),
            Scheme::Glorot => (2.0 / (ni + nh), 2.0 / (nh + no)),
            Scheme::He => (2.0 / ni, 2.0 / nh),
            Scheme::Scaled => {
                let (a1, a2) = self.alphas.expect("validated");
                (a1 * a1 / ni, a2 * a2 / nh)
            }
        })
    }
}

pub fn random_scheme_init(
    spec: SchemeSpec,
    n_in: usize,
    n_h: usize,
    n_out: usize,
    seed: u64,
) -> Result<NetworkParams> {
    if n_in == 0 || n_h == 0 || n_out == 0 {
        return Err(Error::Dimension("dimensions must be positive".into()));
    }
    let (v1, v2) = spec.layer_variances(n_in, n_h, n_out)?;
    let mut rng = linalg::rng(seed);
    let w1 = linalg::randn(n_h, n_in, &mut rng) * v1.sqrt();
    let w2 = linalg::randn(n_out, n_h, &mut rng) * v2.sqrt();
    NetworkParams::new(w1, w2)
}

/// Closed-form expectation of the balance diagonal and the variance
/// coefficient `c` of the balance entries: off-diagonal entries have variance
/// `c`, diagonal entries `2c`.
pub fn expected_balance(
    spec: SchemeSpec,
    n_in: usize,
    n_h: usize,
    n_out: usize,
) -> Result<(f64, f64)> {
    let (v1, v2) = spec.layer_variances(n_in, n_h, n_out)?;
    let (ni, no) = (n_in as f64, n_out as f64);
    Ok((no * v2 - ni * v1, no * v2 * v2 + ni * v1 * v1))
}

/// Sample statistics of the balance matrix over independent draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceAudit {
    pub n_trials: usize,
    /// Mean of all diagonal entries.
    pub mean_lambda: f64,
    /// Standard error of `mean_lambda`, from the spread of per-trial diagonal means.
    pub stderr_mean: f64,
    /// Pooled sample variance of diagonal entries.
    pub var_diag: f64,
    /// Pooled sample variance of off-diagonal entries.
    pub var_offdiag: f64,
}

pub fn monte_carlo_balance(
    spec: SchemeSpec,
    dims: (usize, usize, usize),
    n_trials: usize,
    seed: u64,
) -> Result<BalanceAudit> {
    monte_carlo_balance_with(Mode::default(), spec, dims, n_trials, seed)
}

/// [`monte_carlo_balance`] with an explicit execution mode. Trial `i` uses
/// seed `seed + i`, so both modes return identical numbers.
pub fn monte_carlo_balance_with(
    mode: Mode,
    spec: SchemeSpec,
    dims: (usize, usize, usize),
    n_trials: usize,
    seed: u64,
) -> Result<BalanceAudit> {
    if n_trials < 2 {
        return Err(Error::Precondition("need at least 2 trials".into()));
    }
    let (n_in, n_h, n_out) = dims;
    spec.layer_variances(n_in, n_h, n_out)?;
    let trials: Vec<u64> = (0..n_trials as u64).collect();
    let per_trial = par::map_with(mode, trials, |i| {
        let p = random_scheme_init(spec, n_in, n_h, n_out, seed.wrapping_add(i))
            .expect("validated above");
        let b = balance_matrix(&p);
        let diag: Vec<f64> = (0..n_h).map(|k| b[(k, k)]).collect();
        let mut off = Vec::with_capacity(n_h * n_h.saturating_sub(1) / 2);
        for r in 0..n_h {
            for c in (r + 1)..n_h {
                off.push(b[(r, c)]);
            }
        }
        (diag, off)
    });
    let trial_means: Vec<f64> =
        per_trial.iter().map(|(d, _)| d.iter().sum::<f64>() / d.len() as f64).collect();
    let all_diag: Vec<f64> = per_trial.iter().flat_map(|(d, _)| d.iter().copied()).collect();
    let all_off: Vec<f64> = per_trial.iter().flat_map(|(_, o)| o.iter().copied()).collect();
    let (mean_lambda, var_means) = mean_var(&trial_means);
    let (_, var_diag) = mean_var(&all_diag);
    let (_, var_offdiag) = if all_off.len() >= 2 { mean_var(&all_off) } else { (0.0, 0.0) };
    Ok(BalanceAudit {
        n_trials,
        mean_lambda,
        stderr_mean: (var_means / n_trials as f64).sqrt(),
        var_diag,
        var_offdiag,
    })
}

/// Mean and unbiased sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_init_has_requested_norm() {
        for lambda in [-3.0, 0.0, 5.0] {
            let p = lambda_balanced_with_scale(lambda, (4, 2, 2), 7.5, 3).unwrap();
            assert!((p.product().norm() - 7.5).abs() < 1e-10);
            assert!(BalanceReport::new(&p).deviation_from(lambda) < 1e-10);
        }
    }

    #[test]
    fn zero_balanced_small_init() {
        let p = lambda_balanced_init(0.0, 2, 2, 2, 1e-5, 0).unwrap();
        let a = &p.w1 * p.w1.transpose();
        let b = p.w2.transpose() * &p.w2;
        assert!(linalg::max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn funnel_positive_lambda() {
        let p = lambda_balanced_init(2.0, 3, 2, 2, 1.0, 0).unwrap();
        let r = BalanceReport::new(&p);
        assert!((r.lambda_hat - 2.0).abs() < 1e-9);
        assert!(r.max_offdiag < 1e-9);
    }

    #[test]
    fn negative_lambda_gives_negative_identity() {
        let p = lambda_balanced_init(-2.0, 3, 3, 3, 1.0, 4).unwrap();
        assert!(BalanceReport::new(&p).deviation_from(-2.0) < 1e-9);
    }

    #[test]
    fn wide_hidden_layer_sign_guards() {
        assert!(matches!(lambda_balanced_init(-2.0, 2, 3, 3, 1.0, 0), Err(Error::Sign(_))));
        assert!(matches!(lambda_balanced_init(2.0, 3, 3, 2, 1.0, 0), Err(Error::Sign(_))));
        assert!(matches!(lambda_balanced_init(1.0, 2, 4, 3, 1.0, 0), Err(Error::Sign(_))));
        assert!(matches!(lambda_balanced_init(1.0, 3, 1, 2, 1.0, 0), Err(Error::Bottleneck { .. })));
        let p = lambda_balanced_init(1.5, 2, 3, 4, 1.0, 2).unwrap();
        assert!(BalanceReport::new(&p).deviation_from(1.5) < 1e-9);
        let p = lambda_balanced_init(-1.5, 4, 3, 2, 1.0, 2).unwrap();
        assert!(BalanceReport::new(&p).deviation_from(-1.5) < 1e-9);
        let p = lambda_balanced_init(0.0, 5, 10, 6, 1e-4, 2).unwrap();
        assert!(BalanceReport::new(&p).deviation_from(0.0) < 1e-12);
    }

    #[test]
    fn product_is_the_gaussian_product() {
        let seed = 11;
        let mut rng = linalg::rng(seed);
        let w1 = linalg::randn(3, 4, &mut rng) * 0.7;
        let w2 = linalg::randn(2, 3, &mut rng) * 0.7;
        let p = lambda_balanced_init(-1.0, 4, 3, 2, 0.7, seed).unwrap();
        assert!(linalg::max_abs_diff(&p.product(), &(w2 * w1)) < 1e-12);
    }

    #[test]
    fn scaled_needs_alphas() {
        let spec = SchemeSpec { scheme: Scheme::Scaled, alphas: None };
        assert_eq!(random_scheme_init(spec, 2, 2, 2, 0), Err(Error::MissingAlphas("scaled")));
    }

    #[test]
    fn lecun_table_row() {
        let (e, c) = expected_balance(SchemeSpec::new(Scheme::LeCun), 160, 80, 120).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        assert!((c - 0.025).abs() < 1e-15);
    }

    #[test]
    fn scheme_init_is_deterministic() {
        let s = SchemeSpec::new(Scheme::Glorot);
        assert_eq!(random_scheme_init(s, 4, 3, 5, 9), random_scheme_init(s, 4, 3, 5, 9));
    }

    #[test]
    fn monte_carlo_is_reproducible_across_modes() {
        let s = SchemeSpec::new(Scheme::He);
        let a = monte_carlo_balance_with(Mode::Sequential, s, (6, 4, 5), 2, 3).unwrap();
        let b = monte_carlo_balance_with(Mode::Parallel, s, (6, 4, 5), 2, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_identities() {
        let s = [3.0, 1.0, 0.2];
        for lambda in [-50.0, -2.0, 0.0, 2.0, 50.0] {
            let (s1, s2) = balanced_split(&s, lambda);
            for k in 0..3 {
                assert!((s1[k] * s2[k] - s[k]).abs() < 1e-12);
                assert!((s2[k] * s2[k] - s1[k] * s1[k] - lambda).abs() < 1e-10);
            }
        }
    }
}
