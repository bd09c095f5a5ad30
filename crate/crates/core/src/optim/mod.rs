//! KL-constrained posterior optimization and the baselines it is compared to.
//!
//! The main entry points:
//! - [`tune_prior`] — unconstrained efficiency optimization of the prior on
//!   the tuning split D₀ (mean only, or mean and variance).
//! - [`optimize_posterior`] — augmented-Lagrangian minimization of the
//!   smoothed efficiency loss subject to KL(Q‖P) staying within the budget
//!   that certifies test-time coverage.
//! - [`learned_baseline`] — the point-estimate comparison: optimize θ on D₀,
//!   recalibrate on the held-out split at a PAC-corrected empirical rate.
//! - [`alpha_hat_grid_search`] — run the constrained pipeline over a grid of
//!   empirical rates at failure probability δ/|grid| each and keep the run
//!   with the best efficiency certificate.

mod auglag;
mod baseline;
mod grid;
mod loss;
mod prior;
mod update;

pub use auglag::{optimize_posterior, optimize_posterior_with_budget, PosteriorOutcome, TraceRow};
pub use baseline::{learned_baseline, standard_baseline, CalibrationBound};
pub use grid::{alpha_hat_grid_search, derive_seed, empirical_efficiency01, GridRun, GridSearchResult};
pub use loss::{
    build_point_loss, build_sample_loss, differentiable_loss, eval_loss_frozen, loss_and_grads,
    PointLossGraph, RegressionLoss, SampleLossGraph,
};
pub use prior::tune_prior;
pub use update::{OptimKind, Updater};

use crate::bounds::BoundError;
use crate::conformal::ConformalError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("dataset too small: {0}")]
    DataTooSmall(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    Fixed,
    TuneMean,
    TuneMeanVar,
}

/// Hyperparameters shared by every optimization routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Target test-time miscoverage.
    pub alpha: f64,
    /// Certificate failure probability.
    pub delta: f64,
    /// Empirical rates for the constrained runs; δ is split across them.
    pub alpha_hat_grid: Vec<f64>,
    /// Gradient steps per augmented-Lagrangian round (and for the
    /// unconstrained phases).
    pub inner_steps: usize,
    /// Augmented-Lagrangian rounds.
    pub outer_iterations: usize,
    pub learning_rate: f64,
    /// Minibatch size J.
    pub minibatch: usize,
    /// Posterior samples K per step.
    pub theta_samples: usize,
    /// Initial quadratic penalty weight; doubled after any violating round.
    pub rho_init: f64,
    /// Temperature T of the sigmoid soft set size.
    pub set_size_temperature: f64,
    /// Temperature of the soft-sort quantile relaxation.
    pub soft_sort_temperature: f64,
    pub prior_mode: PriorMode,
    /// Fraction of the calibration data used as the tuning split D₀.
    pub data_split: f64,
    /// Pre-sampled (θ, τ) pairs in the final randomized predictor.
    pub eval_pairs: usize,
    /// Posterior samples used by the frozen evaluation pass that selects the
    /// best feasible iterate.
    pub eval_theta_samples: usize,
    pub optimizer: OptimKind,
    /// Prior variance scale: σ² = scale/√fan_in per coordinate.
    pub prior_sigma_scale: f64,
    pub regression_loss: RegressionLoss,
    /// Interval widths are mapped to [0, 1] as min(width, scale)/scale for
    /// the efficiency certificate (regression only).
    pub width_scale: f64,
    /// Override for the score bound β in the efficiency certificate;
    /// defaults to the largest calibration score observed.
    pub beta_bound: Option<f64>,
    /// Override for the τ-Lipschitz constant of the [0,1]-valued efficiency
    /// loss; defaults to 1/(4T) for classification and the measured scale
    /// bound for regression.
    pub l_tau: Option<f64>,
    /// Keep per-step (loss, KL, λ, ρ) rows for the diagnostics CSV.
    pub record_trace: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig::default_regression()
    }
}

impl OptimConfig {
    /// Regression defaults: 2000 steps at learning rate 1e-3 per
    /// unconstrained solve, 7 outer rounds, batch 100.
    pub fn default_regression() -> Self {
        OptimConfig {
            alpha: 0.1,
            delta: 0.05,
            alpha_hat_grid: vec![0.05],
            inner_steps: 2000,
            outer_iterations: 7,
            learning_rate: 1e-3,
            minibatch: 100,
            theta_samples: 4,
            rho_init: 1.0,
            set_size_temperature: 0.1,
            soft_sort_temperature: 0.01,
            prior_mode: PriorMode::TuneMean,
            data_split: 0.5,
            eval_pairs: 10,
            eval_theta_samples: 4,
            optimizer: OptimKind::Sgd,
            prior_sigma_scale: 0.02,
            regression_loss: RegressionLoss::LogFullRadius,
            width_scale: 10.0,
            beta_bound: None,
            l_tau: None,
            record_trace: false,
        }
    }

    /// Classification defaults: 10 outer rounds, prior mean and variance
    /// both tuned, σ² = 0.01/√fan_in.
    pub fn default_classification() -> Self {
        OptimConfig {
            outer_iterations: 10,
            prior_mode: PriorMode::TuneMeanVar,
            prior_sigma_scale: 0.01,
            alpha_hat_grid: vec![0.02, 0.035, 0.05, 0.065, 0.08],
            ..OptimConfig::default_regression()
        }
    }

    // Negated comparisons are NaN guards.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!("alpha={} outside (0,1)", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(format!("delta={} outside (0,1)", self.delta));
        }
        if self.alpha_hat_grid.is_empty() {
            return Err("alpha_hat_grid is empty".into());
        }
        for &a in &self.alpha_hat_grid {
            if !(a > 0.0 && a < 1.0) {
                return Err(format!("alpha_hat={a} outside (0,1)"));
            }
        }
        if !(self.data_split >= 0.0 && self.data_split < 1.0) {
            return Err(format!("data_split={} outside [0,1)", self.data_split));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("rho_init", self.rho_init),
            ("set_size_temperature", self.set_size_temperature),
            ("soft_sort_temperature", self.soft_sort_temperature),
            ("prior_sigma_scale", self.prior_sigma_scale),
            ("width_scale", self.width_scale),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name}={v} must be positive"));
            }
        }
        for (name, v) in [
            ("inner_steps", self.inner_steps),
            ("minibatch", self.minibatch),
            ("theta_samples", self.theta_samples),
            ("eval_pairs", self.eval_pairs),
            ("eval_theta_samples", self.eval_theta_samples),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Augmented-Lagrangian state carried across outer rounds.
#[derive(Debug, Clone)]
pub struct AugLagState {
    /// Multiplier for the inequality constraint, kept non-negative.
    pub lambda: f64,
    /// Quadratic penalty weight.
    pub rho: f64,
    /// Slack turning KL(Q‖P) − budget ≤ 0 into an equality; clamped ≥ 0
    /// after every gradient step.
    pub slack: f64,
    /// Best feasible iterate so far and its frozen evaluation loss.
    pub best_feasible: Option<(crate::diff::gaussian::DiagGaussian, f64)>,
}

impl AugLagState {
    pub fn new(rho_init: f64) -> Self {
        AugLagState {
            lambda: 0.0,
            rho: rho_init,
            slack: 0.0,
            best_feasible: None,
        }
    }
}
