use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("rank deficient: singular value {0:e} is below 1e-12")]
    RankDeficient(f64),
    #[error("sign constraint: {0}")]
    Sign(String),
    #[error("network cannot be bottlenecked: n_h = {n_h} < min(n_in, n_out) = {min}")]
    Bottleneck { n_h: usize, min: usize },
    #[error("scheme {0} needs alphas")]
    MissingAlphas(&'static str),
    #[error("scheme {0} takes no alphas")]
    UnexpectedAlphas(&'static str),
    #[error("initial weights are not {lambda}-balanced: max deviation {deviation:e}")]
    BalanceMismatch { lambda: f64, deviation: f64 },
    #[error("A(t) is ill-conditioned (condition estimate {0:e}); use the stable form")]
    IllConditioned(f64),
    #[error("B is singular (smallest singular value {0:e})")]
    SingularB(f64),
    #[error("training diverged at step {step}: loss {loss:e}")]
    Divergence { step: usize, loss: f64 },
    #[error("index {index} out of range for {len} modes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("hidden activation of item {0} vanishes")]
    ZeroActivation(usize),
    #[error("kernel has zero norm")]
    ZeroNorm,
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("trajectory time grids differ")]
    GridMismatch,
    #[error("serialisation: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
