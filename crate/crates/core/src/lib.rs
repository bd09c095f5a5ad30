//! Conformal prediction with PAC-Bayes generalization certificates.
//!
//! The crate is organized around the pipeline it implements:
//!
//! - [`bounds`] — closed-form bound calculus: Bernoulli KL and its inverse,
//!   the Hoeffding-style and binomial-tail calibration corrections, the
//!   PAC-Bayes coverage/efficiency bounds and the KL budget they induce.
//! - [`diff`] — a small reverse-mode autodiff layer (tape over flat vectors)
//!   with dense layers, soft sorting / soft quantiles, soft set size, and
//!   diagonal-Gaussian reparametrized sampling.
//! - [`conformal`] — score functions, calibration, prediction sets, and the
//!   randomized set-valued predictor built from pre-sampled (θ, τ) pairs.
//! - [`optim`] — the KL-constrained posterior optimizer (augmented
//!   Lagrangian), prior tuning, the learned point-estimate baseline, and the
//!   empirical-coverage grid search with union bound.
//! - [`tasks`] — data generation and ingestion: heteroskedastic 1-D
//!   regression, synthetic and IDX-file digit classification with the
//!   rotation + noise corruption, and base-model pretraining.

pub mod bounds;
pub(crate) mod counts;
pub mod conformal;
pub mod diff;
pub mod optim;
pub mod tasks;
