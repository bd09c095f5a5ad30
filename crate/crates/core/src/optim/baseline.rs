//! The standard and learned (point-estimate) baselines.

use super::loss::{build_point_loss, sample_minibatch};
use super::update::Updater;
use super::{OptimConfig, OptimError};
use crate::bounds::{vovk_2a_alpha_hat, vovk_2b_alpha_hat};
use crate::conformal::{CalibratedPredictor, LabeledData, ScoreModel};
use crate::diff::params::ParamVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which PAC calibration correction supplies α̂ for a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationBound {
    Vovk2a,
    Vovk2b,
}

pub fn bound_alpha_hat(
    bound: CalibrationBound,
    alpha: f64,
    delta: f64,
    n: usize,
) -> Result<f64, crate::bounds::BoundError> {
    match bound {
        CalibrationBound::Vovk2a => vovk_2a_alpha_hat(alpha, delta, n),
        CalibrationBound::Vovk2b => vovk_2b_alpha_hat(alpha, delta, n),
    }
}

/// Standard inductive conformal prediction: the data-independent initial θ,
/// calibrated on the entire calibration set at the PAC-corrected rate.
pub fn standard_baseline(
    model: &ScoreModel,
    theta_init: ParamVector,
    data: &LabeledData,
    cfg: &OptimConfig,
    bound: CalibrationBound,
) -> Result<(CalibratedPredictor, f64), OptimError> {
    let alpha_hat = bound_alpha_hat(bound, cfg.alpha, cfg.delta, data.len())?;
    let pred = CalibratedPredictor::single(model, theta_init, data, alpha_hat)?;
    Ok((pred, alpha_hat))
}

/// Learned baseline: optimize a point estimate θ on D₀ with the smoothed
/// efficiency loss, then recalibrate on the held-out D_N at the rate the
/// chosen bound allows for |D_N|. Zero steps (or an empty D₀) leaves θ at
/// its initialization, which makes this identical to the standard baseline
/// run on the same D_N.
#[allow(clippy::too_many_arguments)]
pub fn learned_baseline(
    model: &ScoreModel,
    theta_init: ParamVector,
    d0: &LabeledData,
    dn: &LabeledData,
    cfg: &OptimConfig,
    bound: CalibrationBound,
    steps: usize,
    seed: u64,
) -> Result<(CalibratedPredictor, f64), OptimError> {
    if dn.is_empty() {
        return Err(OptimError::DataTooSmall(
            "held-out recalibration split is empty".to_string(),
        ));
    }
    let alpha_hat = bound_alpha_hat(bound, cfg.alpha, cfg.delta, dn.len())?;

    let mut theta = theta_init;
    if steps > 0 && !d0.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut updater = Updater::new(cfg.optimizer, cfg.learning_rate, theta.len());
        for _ in 0..steps {
            let batch = sample_minibatch(d0, cfg.minibatch, &mut rng);
            let graph = build_point_loss(theta.values(), model, &batch, alpha_hat, cfg);
            let grads = graph.tape.backward(graph.loss);
            updater.step(theta.values_mut(), grads.wrt(graph.theta));
        }
    }

    let pred = CalibratedPredictor::single(model, theta, dn, alpha_hat)?;
    Ok((pred, alpha_hat))
}
