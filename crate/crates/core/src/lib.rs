//! Batch Bayesian optimization with Gaussian processes.
//!
//! Each iteration queries a batch of `K` points: one chosen by the upper
//! confidence bound rule and `K − 1` chosen by pure exploration (greedy
//! maximization of the hallucinated posterior deviation) inside a relevant
//! region that retains the maximizer with high probability.

pub mod benchmarks;
pub mod domain;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod strategy;

pub use error::{Error, Result};
pub use kernel::KernelSpec;
