//! Score functions, calibration, and set-valued prediction.
//!
//! Two score families are supported: the scaled-residual regression score
//! |f(x) − y| / (1 + σ(θ_g)·u(x; θ_u)) with a learned uncertainty network and
//! gate, and the classification score −[log softmax f(x; θ)]_y. Prediction
//! sets are the τ sub-level sets of the score; calibration picks τ as the
//! ⌈(n+1)(1−α̂)⌉-th smallest calibration score.

mod predictor;

pub use predictor::{
    build_randomized_predictor, evaluate, CalibratedPredictor, CertificateInputs, EvalMetrics,
    PredictorFile, PREDICTOR_FILE_VERSION,
};

use crate::diff::nn::{forward_mlp, forward_mlp_on_tape, MlpArch, MlpVars, OutputHead};
use crate::diff::params::{Layout, ParamVector};
use crate::diff::soft::hard_quantile_threshold;
use crate::diff::tape::{Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("empty dataset")]
    EmptyData,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("predictor file version {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },
}

/// A label: real-valued for regression, class index for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Value(f64),
    Class(usize),
}

impl Target {
    pub fn value(&self) -> f64 {
        match self {
            Target::Value(v) => *v,
            Target::Class(_) => panic!("expected a regression target"),
        }
    }

    pub fn class(&self) -> usize {
        match self {
            Target::Class(c) => *c,
            Target::Value(_) => panic!("expected a classification target"),
        }
    }
}

/// Inputs paired with targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledData {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Target>,
}

impl LabeledData {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<Target>) -> Self {
        assert_eq!(xs.len(), ys.len(), "inputs/targets length mismatch");
        LabeledData { xs, ys }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledData {
        LabeledData {
            xs: indices.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: indices.iter().map(|&i| self.ys[i]).collect(),
        }
    }

    /// Split into (first, rest) after a seeded shuffle; `fraction` of points
    /// go to the first part.
    pub fn split<R: Rng>(&self, fraction: f64, rng: &mut R) -> (LabeledData, LabeledData) {
        let mut indices: Vec<usize> = (0..self.len()).collect();
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let cut = ((self.len() as f64) * fraction).round() as usize;
        (self.subset(&indices[..cut]), self.subset(&indices[cut..]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// |f(x) − y| / (1 + σ(θ_g)·u(x; θ_u)); base network frozen, θ = (θ_u, θ_g).
    RegressionScaled,
    /// −[log softmax f(x; θ)]_y; θ = the base network parameters.
    ClassificationLogProb,
}

/// A parametric nonconformity score: architecture descriptors plus the frozen
/// base parameters. The trainable vector θ is the aux (u-network + gate) for
/// regression and the base parameters for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub kind: ScoreKind,
    pub base_arch: MlpArch,
    pub base_params: ParamVector,
    pub aux_arch: Option<MlpArch>,
    theta_layout: Arc<Layout>,
}

/// Offset inside the softplus that keeps the uncertainty output near zero at
/// a zeroed final layer: u = −1 + softplus(FF(x) + 0.6).
const U_SOFTPLUS_OFFSET: f64 = 0.6;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ScoreModel {
    pub fn regression(base_arch: MlpArch, base_params: ParamVector, u_arch: MlpArch) -> Self {
        assert_eq!(base_params.len(), base_arch.param_count());
        assert_eq!(u_arch.output, 1, "uncertainty network must be scalar");
        let mut segments: Vec<(String, Vec<usize>)> = u_arch
            .layout()
            .segments()
            .iter()
            .map(|s| (format!("u_{}", s.name), s.shape.clone()))
            .collect();
        segments.push(("gate".to_string(), vec![1]));
        ScoreModel {
            kind: ScoreKind::RegressionScaled,
            base_arch,
            base_params,
            aux_arch: Some(u_arch),
            theta_layout: Arc::new(Layout::new(segments)),
        }
    }

    pub fn classification(arch: MlpArch, params: ParamVector) -> Self {
        assert_eq!(params.len(), arch.param_count());
        assert_eq!(
            arch.head,
            OutputHead::LogSoftmax,
            "classifier needs a log-softmax head"
        );
        let layout = params.layout().clone();
        ScoreModel {
            kind: ScoreKind::ClassificationLogProb,
            base_arch: arch,
            base_params: params,
            aux_arch: None,
            theta_layout: layout,
        }
    }

    pub fn theta_layout(&self) -> &Arc<Layout> {
        &self.theta_layout
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_layout.total_len()
    }

    /// Number of classes for classification models.
    pub fn n_classes(&self) -> usize {
        debug_assert_eq!(self.kind, ScoreKind::ClassificationLogProb);
        self.base_arch.output
    }

    /// Data-independent initial θ. For regression the u-network gets random
    /// hidden layers with a zeroed output layer (so u is constant and the
    /// score reduces to a fixed rescaling of the plain residual) and the gate
    /// starts at −2, mostly closed. For classification θ starts at the
    /// pretrained base parameters.
    pub fn init_theta<R: Rng>(&self, rng: &mut R) -> ParamVector {
        match self.kind {
            ScoreKind::ClassificationLogProb => self.base_params.clone(),
            ScoreKind::RegressionScaled => {
                let u_arch = self.aux_arch.as_ref().expect("regression aux");
                let u_init = u_arch.init_params(rng, true);
                let mut values = u_init.into_values();
                values.push(-2.0);
                ParamVector::new(self.theta_layout.clone(), values)
            }
        }
    }

    /// Per-θ-coordinate fan-in, used to scale prior variances.
    pub fn theta_fan_ins(&self) -> Vec<f64> {
        match self.kind {
            ScoreKind::ClassificationLogProb => self.base_arch.fan_ins(),
            ScoreKind::RegressionScaled => {
                let mut f = self.aux_arch.as_ref().expect("regression aux").fan_ins();
                f.push(1.0); // gate
                f
            }
        }
    }

    fn check_theta(&self, theta: &ParamVector) {
        assert_eq!(
            theta.len(),
            self.theta_dim(),
            "theta length does not match the score model"
        );
    }

    /// Base prediction f(x) for regression models (frozen parameters).
    pub fn base_prediction(&self, x: &[f64]) -> f64 {
        forward_mlp(&self.base_arch, self.base_params.values(), x)[0]
    }

    /// u(x; θ_u) = −1 + softplus(FF(x) + 0.6).
    pub fn uncertainty(&self, theta: &ParamVector, x: &[f64]) -> f64 {
        let u_arch = self.aux_arch.as_ref().expect("regression aux");
        let u_len = u_arch.param_count();
        let ff = forward_mlp(u_arch, &theta.values()[..u_len], x)[0];
        let z = ff + U_SOFTPLUS_OFFSET;
        -1.0 + (z.max(0.0) + (-z.abs()).exp().ln_1p())
    }

    /// 1 + σ(θ_g)·u(x; θ_u), the scaling of the regression residual. Strictly
    /// positive because u > −1 and σ(θ_g) ∈ (0, 1).
    pub fn score_scale(&self, theta: &ParamVector, x: &[f64]) -> f64 {
        self.check_theta(theta);
        let gate = theta.values()[theta.len() - 1];
        1.0 + sigmoid(gate) * self.uncertainty(theta, x)
    }

    /// Per-label scores for classification: −log softmax of the logits.
    pub fn class_scores(&self, theta: &ParamVector, x: &[f64]) -> Vec<f64> {
        self.check_theta(theta);
        forward_mlp(&self.base_arch, theta.values(), x)
            .into_iter()
            .map(|l| -l)
            .collect()
    }
}

/// Nonconformity score s(x, y; θ).
pub fn score(model: &ScoreModel, theta: &ParamVector, x: &[f64], y: &Target) -> f64 {
    match model.kind {
        ScoreKind::RegressionScaled => {
            let f = model.base_prediction(x);
            (f - y.value()).abs() / model.score_scale(theta, x)
        }
        ScoreKind::ClassificationLogProb => model.class_scores(theta, x)[y.class()],
    }
}

/// Set-valued prediction: the τ sub-level set of the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictionSet {
    Labels(Vec<usize>),
    Interval { lo: f64, hi: f64 },
}

impl PredictionSet {
    pub fn contains(&self, y: &Target) -> bool {
        match self {
            PredictionSet::Labels(labels) => labels.contains(&y.class()),
            PredictionSet::Interval { lo, hi } => {
                let v = y.value();
                *lo <= v && v <= *hi
            }
        }
    }

    /// Task-specific size: label count or interval width.
    pub fn efficiency(&self) -> f64 {
        match self {
            PredictionSet::Labels(labels) => labels.len() as f64,
            PredictionSet::Interval { lo, hi } => hi - lo,
        }
    }
}

/// C(x; τ) = {y : s(x, y; θ) ≤ τ}. For regression this is the closed
/// interval f(x) ± τ·(1 + σ(θ_g)·u(x)); τ = +∞ yields everything.
pub fn predict_set(model: &ScoreModel, theta: &ParamVector, x: &[f64], tau: f64) -> PredictionSet {
    match model.kind {
        ScoreKind::RegressionScaled => {
            let f = model.base_prediction(x);
            let radius = tau * model.score_scale(theta, x);
            PredictionSet::Interval {
                lo: f - radius,
                hi: f + radius,
            }
        }
        ScoreKind::ClassificationLogProb => {
            let scores = model.class_scores(theta, x);
            PredictionSet::Labels((0..scores.len()).filter(|&y| scores[y] <= tau).collect())
        }
    }
}

/// All calibration scores for a fixed θ, in dataset order.
pub fn score_dataset(model: &ScoreModel, theta: &ParamVector, data: &LabeledData) -> Vec<f64> {
    use rayon::prelude::*;
    data.xs
        .par_iter()
        .zip(data.ys.par_iter())
        .map(|(x, y)| score(model, theta, x, y))
        .collect()
}

/// Threshold selection: the ⌈(n+1)(1−α̂)⌉-th smallest calibration score.
pub fn calibrate(
    model: &ScoreModel,
    theta: &ParamVector,
    data: &LabeledData,
    alpha_hat: f64,
) -> Result<f64, ConformalError> {
    if data.is_empty() {
        return Err(ConformalError::EmptyData);
    }
    let scores = score_dataset(model, theta, data);
    Ok(hard_quantile_threshold(&scores, alpha_hat))
}

/// Tape-side score machinery shared by the loss builders: the per-model
/// sliced parameter vars. Slicing happens once per tape so a whole minibatch
/// reuses the same weight nodes.
pub struct ScoreGraph<'m> {
    pub model: &'m ScoreModel,
    theta_vars: MlpVars,
    gate: Option<Var>,
}

impl<'m> ScoreGraph<'m> {
    pub fn new(tape: &mut Tape, model: &'m ScoreModel, theta: Var) -> Self {
        assert_eq!(tape.value(theta).len(), model.theta_dim());
        match model.kind {
            ScoreKind::ClassificationLogProb => ScoreGraph {
                model,
                theta_vars: MlpVars::slice_from(tape, &model.base_arch, theta),
                gate: None,
            },
            ScoreKind::RegressionScaled => {
                let u_arch = model.aux_arch.as_ref().expect("regression aux");
                let u_len = u_arch.param_count();
                let u_theta = tape.slice(theta, 0, u_len);
                let gate = tape.index(theta, u_len);
                ScoreGraph {
                    model,
                    theta_vars: MlpVars::slice_from(tape, u_arch, u_theta),
                    gate: Some(gate),
                }
            }
        }
    }

    /// Per-label score vector (classification): −log softmax f(x; θ).
    pub fn class_scores(&self, tape: &mut Tape, x: &[f64]) -> Var {
        let logits = forward_mlp_on_tape(tape, &self.model.base_arch, &self.theta_vars, x);
        tape.scale(logits, -1.0)
    }

    /// Scale 1 + σ(θ_g)·u(x; θ_u) (regression).
    pub fn scale_var(&self, tape: &mut Tape, x: &[f64]) -> Var {
        let u_arch = self.model.aux_arch.as_ref().expect("regression aux");
        let ff = forward_mlp_on_tape(tape, u_arch, &self.theta_vars, x);
        let shifted = tape.offset(ff, U_SOFTPLUS_OFFSET);
        let sp = tape.softplus(shifted);
        let u = tape.offset(sp, -1.0);
        let gate_sig = tape.sigmoid(self.gate.expect("regression gate"));
        let gated = tape.mul(gate_sig, u);
        tape.offset(gated, 1.0)
    }

    /// Scalar score for one example.
    pub fn score_var(&self, tape: &mut Tape, x: &[f64], y: &Target) -> Var {
        match self.model.kind {
            ScoreKind::ClassificationLogProb => {
                let scores = self.class_scores(tape, x);
                tape.index(scores, y.class())
            }
            ScoreKind::RegressionScaled => {
                let resid = (self.model.base_prediction(x) - y.value()).abs();
                let numer = tape.leaf_scalar(resid);
                let denom = self.scale_var(tape, x);
                tape.div(numer, denom)
            }
        }
    }
}
