//! Estimation lab for mutual information, KL divergence, and entropy.
//!
//! The crate has three layers:
//!
//! * **Estimators** ([`estimators`]): sample-based neural estimators of
//!   mutual information. All share one training loop and one critic
//!   implementation ([`numerics::Critic`]).
//!
//!   | kind           | objective                                              |
//!   |----------------|--------------------------------------------------------|
//!   | `dv`           | max E_p[f] - ln E_q[e^f]                               |
//!   | `mine`         | `dv` estimate, bias-corrected denominator in the grad  |
//!   | `nwj`          | max E_p[g] - E_q[e^(g-1)]                              |
//!   | `nwj_js`       | critic trained on the logistic loss, read out as `nwj` |
//!   | `cpc`          | in-batch contrastive bound, capped at ln N             |
//!   | `interp`       | convex mix of the `cpc` and `nwj` penalties            |
//!   | `doe_gaussian` | entropy difference via Gaussian density models         |
//!   | `doe_logistic` | entropy difference via logistic density models         |
//!
//! * **Oracles** ([`oracles`]): exact KL / entropy / MI on finite supports,
//!   the optimal critic, confidence bounds. These are the ground truth the
//!   estimators are judged against.
//!
//! * **Experiments** ([`experiments`]): correlated-Gaussian benchmarks and
//!   Monte Carlo demos of why every distribution-free high-confidence lower
//!   bound on KL, MI, or entropy saturates near `ln N` at sample size N.
//!
//! Everything is driven by explicit [`rng`] seeds: a run is a pure function
//! of its config, so results reproduce bit for bit, with or without the
//! `parallel` feature.

pub mod cli;
pub mod distributions;
pub mod estimators;
pub mod exec;
pub mod experiments;
pub mod numerics;
pub mod oracles;
pub mod rng;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("support size mismatch: {0} vs {1}")]
    SupportMismatch(usize, usize),
    #[error("KL divergence is infinite: q = 0 at atom {atom} where p = {p}")]
    InfiniteDivergence { atom: usize, p: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
