//! Minimal reverse-mode differentiable computation layer.
//!
//! Provides exactly what the differentiable calibration loss needs: a scalar
//! tape over flat vectors, dense layers with standard activations, soft
//! sorting / soft quantiles, the sigmoid soft set size, and diagonal-Gaussian
//! reparametrized sampling with analytic KL. Gradients of every operation are
//! checked against central finite differences in the test suite.

pub mod gaussian;
pub mod nn;
pub mod params;
pub mod soft;
pub mod tape;

pub use gaussian::{
    gaussian_kl, gaussian_kl_on_tape, reparam_sample, reparam_sample_on_tape, DiagGaussian,
};
pub use nn::{forward_mlp, forward_mlp_on_tape, Activation, MlpArch, MlpVars, OutputHead};
pub use params::{Layout, ParamVector, Segment};
pub use soft::{
    hard_quantile_threshold, soft_quantile, soft_quantile_on_tape, soft_set_size,
    soft_set_size_on_tape,
};
pub use tape::{Grads, Tape, Var};
