//! Simulation and estimation toolkit for binary forced-choice conjoint
//! experiments with a context (subgroup) factor.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`] draws ground-truth coefficients and simulated choice tasks.
//! - [`encoding`] turns tasks into design matrices (per-profile one-hot,
//!   left-minus-right difference encoding, or OLS interaction columns).
//! - [`mlp`] is a small from-scratch feed-forward classifier used as the
//!   black-box expectation engine.
//! - [`dipce`] recovers main and attribute-by-context interaction effects
//!   from conditional-mean contrasts of a trained model, with percentile
//!   bootstrap intervals.
//! - [`baselines`] is the OLS-with-interactions estimator and its
//!   multiple-testing corrections.
//! - [`metrics`] scores ternary classifications against the truth.
//! - [`harness`] runs the configuration grid and writes figure data.

pub mod baselines;
pub mod dipce;
pub mod effects;
pub mod encoding;
mod error;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
