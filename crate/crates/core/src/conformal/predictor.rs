//! The randomized set-valued predictor: a bank of pre-sampled (θ, τ) pairs.
//!
//! After posterior optimization we pre-sample M parameter vectors from Q and
//! pre-compute each one's calibration threshold, so test-time evaluation does
//! not need the calibration data. Each test input is assigned one pair from
//! an independent random stream keyed by (seed, point index), which makes
//! evaluation order-independent and reproducible.

use super::{calibrate, predict_set, ConformalError, LabeledData, ScoreModel};
use crate::diff::gaussian::{reparam_sample, DiagGaussian};
use crate::diff::params::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PREDICTOR_FILE_VERSION: u32 = 1;

/// Coverage and efficiency metrics measured on a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of test points whose set contained the label.
    pub coverage_rate: f64,
    /// Mean set size (classification) or mean interval width (regression).
    pub mean_efficiency: f64,
    pub n_test: usize,
}

/// A bank of M pre-sampled (θ, τ) pairs over a fixed score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPredictor {
    pub model: ScoreModel,
    pub alpha_hat: f64,
    pub samples: Vec<(ParamVector, f64)>,
}

impl CalibratedPredictor {
    /// Single-θ predictor (the standard and learned baselines).
    pub fn single(
        model: &ScoreModel,
        theta: ParamVector,
        data: &LabeledData,
        alpha_hat: f64,
    ) -> Result<Self, ConformalError> {
        let tau = calibrate(model, &theta, data, alpha_hat)?;
        Ok(CalibratedPredictor {
            model: model.clone(),
            alpha_hat,
            samples: vec![(theta, tau)],
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.samples.len()
    }
}

/// Pre-sample `m` parameter vectors from the posterior and calibrate each.
pub fn build_randomized_predictor(
    q: &DiagGaussian,
    model: &ScoreModel,
    data: &LabeledData,
    alpha_hat: f64,
    m: usize,
    seed: u64,
) -> Result<CalibratedPredictor, ConformalError> {
    assert!(m >= 1, "need at least one pre-sampled pair");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        let noise = q.sample_noise(&mut rng);
        let theta = reparam_sample(q, &noise);
        let tau = calibrate(model, &theta, data, alpha_hat)?;
        samples.push((theta, tau));
    }
    Ok(CalibratedPredictor {
        model: model.clone(),
        alpha_hat,
        samples,
    })
}

/// Evaluate on a test set, assigning each point a uniformly random (θ, τ)
/// pair from its own stream keyed by (seed, point index).
pub fn evaluate(pred: &CalibratedPredictor, test: &LabeledData, seed: u64) -> EvalMetrics {
    assert!(!test.is_empty(), "empty test set");
    let m = pred.samples.len();
    let per_point: Vec<(bool, f64)> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let pair = if m == 1 { 0 } else { rng.random_range(0..m) };
            let (theta, tau) = &pred.samples[pair];
            let set = predict_set(&pred.model, theta, &test.xs[i], *tau);
            (set.contains(&test.ys[i]), set.efficiency())
        })
        .collect();

    let covered = per_point.iter().filter(|(c, _)| *c).count();
    let total_eff: f64 = per_point.iter().map(|(_, e)| e).sum();
    EvalMetrics {
        coverage_rate: covered as f64 / test.len() as f64,
        mean_efficiency: total_eff / test.len() as f64,
        n_test: test.len(),
    }
}

/// Bound inputs stored alongside a predictor so certificates can be
/// recomputed later without the calibration data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub alpha: f64,
    pub delta: f64,
    pub n_cal: usize,
    pub kl_qp: f64,
    /// Mean efficiency loss mapped into [0, 1].
    pub empirical_eff: f64,
    /// Score bound β for the efficiency certificate.
    pub beta_bound: f64,
    /// Lipschitz constant of the efficiency loss in τ.
    pub l_tau: f64,
    /// Failure probability for the efficiency certificate.
    pub gamma: f64,
}

/// Versioned on-disk form: the predictor plus optional certificate inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorFile {
    pub version: u32,
    pub predictor: CalibratedPredictor,
    pub certificate_inputs: Option<CertificateInputs>,
}

impl PredictorFile {
    pub fn new(
        predictor: CalibratedPredictor,
        certificate_inputs: Option<CertificateInputs>,
    ) -> Self {
        PredictorFile {
            version: PREDICTOR_FILE_VERSION,
            predictor,
            certificate_inputs,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ConformalError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConformalError> {
        let raw = std::fs::read_to_string(path)?;
        let file: PredictorFile = serde_json::from_str(&raw)?;
        if file.version != PREDICTOR_FILE_VERSION {
            return Err(ConformalError::UnsupportedVersion {
                found: file.version,
                expected: PREDICTOR_FILE_VERSION,
            });
        }
        Ok(file)
    }
}
