//! Multi-token reliability estimation (MTRE) for hallucination detection.
//!
//! The library scores a model response from its per-token logit rows: a
//! token-level reliability head turns each row into a probability, the
//! probabilities become log-likelihood ratios, and the masked LLR sum over
//! the first few tokens decides whether the response is truthful. A
//! cross-fitting procedure calibrates the LLR temperature and learns
//! early-stopping thresholds, positionwise KL curves diagnose where the
//! reliability signal appears, and four score baselines plus an evaluation
//! stack make the pieces comparable on a common container format.

pub mod aggregation;
pub mod baselines;
pub mod calibration;
pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod divergence;
pub mod error;
pub mod metrics;
pub mod seeding;
pub mod synthgen;

pub use error::{Error, Result};
