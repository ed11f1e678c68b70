//! Exact learning dynamics of two-layer linear networks.
//!
//! A network `y = W2 W1 x` trained by gradient flow on whitened inputs from a
//! lambda-balanced start (`W2ᵀW2 − W1W1ᵀ = λI`) has a closed-form trajectory
//! for `QQᵀ = [W1ᵀ; W2][W1, W2ᵀ]`. This crate provides that solution
//! ([`exact`]), a gradient-descent simulator to check it against
//! ([`simulator`]), the tasks and initialisations the theory consumes
//! ([`tasks`], [`init`]) and derived observables such as the NTK, RSMs,
//! forgetting and noise sensitivity ([`analysis`]).

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod exact;
pub mod init;
pub mod linalg;
pub mod par;
pub mod simulator;
pub mod tasks;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
