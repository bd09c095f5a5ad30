//! The differentiable calibration-efficiency loss.
//!
//! One sample of the stochastic objective: draw K parameter vectors from the
//! posterior via the reparametrization trick, score the J minibatch points
//! under each, take a soft quantile of each sample's scores at level
//! ⌈(J+1)(1−α̂)⌉/J as its threshold, and average the smoothed efficiency of
//! the induced prediction sets over (j, k). Classification uses the sigmoid
//! soft set size at temperature T; regression uses the log of the interval
//! radius τ·(1 + σ(θ_g)·u(x)).

use super::OptimConfig;
use crate::conformal::{LabeledData, ScoreGraph, ScoreKind, ScoreModel};
use crate::counts::ceil_count;
use crate::diff::gaussian::{reparam_sample, reparam_sample_on_tape, DiagGaussian};
use crate::diff::soft::{soft_quantile, soft_set_size};
use crate::diff::tape::{Tape, Var};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which efficiency loss the regression task optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionLoss {
    /// log(τ·(1 + σ(θ_g)·u(x))): log of the full interval radius.
    LogFullRadius,
    /// log(u(x)·τ): the simplified form, with u clamped positive.
    LogUTau,
}

const LOG_EPS: f64 = 1e-12;

/// Quantile level ⌈(J+1)(1−α̂)⌉/J from the minibatch size; the soft rank is
/// clamped into [1, J] downstream.
fn minibatch_quantile_level(j: usize, alpha_hat: f64) -> f64 {
    ceil_count((j as f64 + 1.0) * (1.0 - alpha_hat)) / j as f64
}

/// Smoothed efficiency terms for one θ on one tape: builds per-point scores,
/// a soft threshold, and the mean smoothed efficiency over the batch.
fn efficiency_loss_for_theta(
    tape: &mut Tape,
    model: &ScoreModel,
    theta: Var,
    batch: &LabeledData,
    alpha_hat: f64,
    cfg: &OptimConfig,
) -> Var {
    let graph = ScoreGraph::new(tape, model, theta);
    let j = batch.len();
    let q_level = minibatch_quantile_level(j, alpha_hat);

    match model.kind {
        ScoreKind::ClassificationLogProb => {
            let mut label_scores = Vec::with_capacity(j);
            let mut observed = Vec::with_capacity(j);
            for (x, y) in batch.xs.iter().zip(&batch.ys) {
                let scores = graph.class_scores(tape, x);
                observed.push(tape.index(scores, y.class()));
                label_scores.push(scores);
            }
            let all = tape.concat(&observed);
            let tau =
                crate::diff::soft::soft_quantile_on_tape(tape, all, q_level, cfg.soft_sort_temperature);
            let mut sizes = Vec::with_capacity(j);
            for scores in label_scores {
                sizes.push(crate::diff::soft::soft_set_size_on_tape(
                    tape,
                    scores,
                    tau,
                    cfg.set_size_temperature,
                ));
            }
            let stacked = tape.concat(&sizes);
            tape.mean(stacked)
        }
        ScoreKind::RegressionScaled => {
            let mut scales = Vec::with_capacity(j);
            let mut observed = Vec::with_capacity(j);
            for (x, y) in batch.xs.iter().zip(&batch.ys) {
                let scale = graph.scale_var(tape, x);
                let resid = tape.leaf_scalar((model.base_prediction(x) - y.value()).abs());
                observed.push(tape.div(resid, scale));
                scales.push(scale);
            }
            let all = tape.concat(&observed);
            let tau =
                crate::diff::soft::soft_quantile_on_tape(tape, all, q_level, cfg.soft_sort_temperature);
            let mut losses = Vec::with_capacity(j);
            for scale in scales {
                let term = match cfg.regression_loss {
                    RegressionLoss::LogFullRadius => {
                        let radius = tape.mul(tau, scale);
                        let shifted = tape.offset(radius, LOG_EPS);
                        tape.ln(shifted)
                    }
                    RegressionLoss::LogUTau => {
                        // u = (scale − 1)/σ(θ_g) up to the gate, but the
                        // simplified loss just needs a positive u·τ proxy:
                        // clamp u through a relu before the log.
                        let u = tape.offset(scale, -1.0);
                        let u_pos = tape.relu(u);
                        let u_safe = tape.offset(u_pos, 1e-6);
                        let prod = tape.mul(tau, u_safe);
                        let shifted = tape.offset(prod, LOG_EPS);
                        tape.ln(shifted)
                    }
                };
                losses.push(term);
            }
            let stacked = tape.concat(&losses);
            tape.mean(stacked)
        }
    }
}

/// Loss graph for one posterior sample: leaves (μ, log σ), one reparametrized
/// θ, and the mean smoothed efficiency over the minibatch.
pub struct SampleLossGraph {
    pub tape: Tape,
    pub mu: Var,
    pub log_sigma: Var,
    pub loss: Var,
}

pub fn build_sample_loss(
    q: &DiagGaussian,
    model: &ScoreModel,
    batch: &LabeledData,
    alpha_hat: f64,
    cfg: &OptimConfig,
    noise: &[f64],
) -> SampleLossGraph {
    let mut tape = Tape::new();
    let mu = tape.leaf(q.mu.values().to_vec());
    let log_sigma = tape.leaf(q.log_sigma.values().to_vec());
    let theta = reparam_sample_on_tape(&mut tape, mu, log_sigma, noise);
    let loss = efficiency_loss_for_theta(&mut tape, model, theta, batch, alpha_hat, cfg);
    SampleLossGraph {
        tape,
        mu,
        log_sigma,
        loss,
    }
}

/// Loss graph for a point estimate θ (no sampling): used by the learned
/// baseline and base-model-style fine-tuning.
pub struct PointLossGraph {
    pub tape: Tape,
    pub theta: Var,
    pub loss: Var,
}

pub fn build_point_loss(
    theta_values: &[f64],
    model: &ScoreModel,
    batch: &LabeledData,
    alpha_hat: f64,
    cfg: &OptimConfig,
) -> PointLossGraph {
    let mut tape = Tape::new();
    let theta = tape.leaf(theta_values.to_vec());
    let loss = efficiency_loss_for_theta(&mut tape, model, theta, batch, alpha_hat, cfg);
    PointLossGraph { tape, theta, loss }
}

/// Mean loss over K posterior samples with the given frozen noise vectors,
/// plus its gradients with respect to (μ, log σ). Samples run in parallel;
/// the reduction is sequential in k so results are bit-reproducible.
#[allow(clippy::type_complexity)]
pub fn loss_and_grads(
    q: &DiagGaussian,
    model: &ScoreModel,
    batch: &LabeledData,
    alpha_hat: f64,
    cfg: &OptimConfig,
    noises: &[Vec<f64>],
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = noises.len();
    assert!(k >= 1);
    let per_sample: Vec<(f64, Vec<f64>, Vec<f64>)> = noises
        .par_iter()
        .map(|noise| {
            let g = build_sample_loss(q, model, batch, alpha_hat, cfg, noise);
            let grads = g.tape.backward(g.loss);
            (
                g.tape.scalar(g.loss),
                grads.wrt(g.mu).to_vec(),
                grads.wrt(g.log_sigma).to_vec(),
            )
        })
        .collect();

    let dim = q.dim();
    let mut loss = 0.0;
    let mut g_mu = vec![0.0; dim];
    let mut g_ls = vec![0.0; dim];
    for (l, gm, gl) in &per_sample {
        loss += l;
        for i in 0..dim {
            g_mu[i] += gm[i];
            g_ls[i] += gl[i];
        }
    }
    let inv_k = 1.0 / k as f64;
    loss *= inv_k;
    for i in 0..dim {
        g_mu[i] *= inv_k;
        g_ls[i] *= inv_k;
    }
    (loss, g_mu, g_ls)
}

/// J points sampled without replacement (all of them if J ≥ n), via a
/// partial Fisher-Yates shuffle.
pub(crate) fn sample_minibatch<R: Rng>(data: &LabeledData, j: usize, rng: &mut R) -> LabeledData {
    let n = data.len();
    if j >= n {
        return data.clone();
    }
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..j {
        let swap = rng.random_range(i..n);
        indices.swap(i, swap);
    }
    data.subset(&indices[..j])
}

/// The stochastic objective of one optimization step: K fresh samples on a
/// given minibatch. Returns the scalar loss only.
pub fn differentiable_loss<R: Rng>(
    q: &DiagGaussian,
    model: &ScoreModel,
    batch: &LabeledData,
    alpha_hat: f64,
    cfg: &OptimConfig,
    rng: &mut R,
) -> f64 {
    let noises: Vec<Vec<f64>> = (0..cfg.theta_samples.max(1))
        .map(|_| q.sample_noise(rng))
        .collect();
    let (loss, _, _) = loss_and_grads(q, model, batch, alpha_hat, cfg, &noises);
    loss
}

/// Plain (tape-free) evaluation of the smoothed loss over a whole dataset
/// with frozen noise vectors: the comparable number used to pick the best
/// feasible iterate across outer rounds.
pub fn eval_loss_frozen(
    q: &DiagGaussian,
    model: &ScoreModel,
    data: &LabeledData,
    alpha_hat: f64,
    cfg: &OptimConfig,
    noises: &[Vec<f64>],
) -> f64 {
    let q_level = minibatch_quantile_level(data.len(), alpha_hat);
    let per_sample: Vec<f64> = noises
        .par_iter()
        .map(|noise| {
            let theta = reparam_sample(q, noise);
            match model.kind {
                ScoreKind::ClassificationLogProb => {
                    let all_scores: Vec<Vec<f64>> = data
                        .xs
                        .iter()
                        .map(|x| model.class_scores(&theta, x))
                        .collect();
                    let observed: Vec<f64> = all_scores
                        .iter()
                        .zip(&data.ys)
                        .map(|(s, y)| s[y.class()])
                        .collect();
                    let tau = soft_quantile(&observed, q_level, cfg.soft_sort_temperature);
                    let total: f64 = all_scores
                        .iter()
                        .map(|s| soft_set_size(s, tau, cfg.set_size_temperature))
                        .sum();
                    total / data.len() as f64
                }
                ScoreKind::RegressionScaled => {
                    let scales: Vec<f64> = data
                        .xs
                        .iter()
                        .map(|x| model.score_scale(&theta, x))
                        .collect();
                    let observed: Vec<f64> = data
                        .xs
                        .iter()
                        .zip(&data.ys)
                        .zip(&scales)
                        .map(|((x, y), scale)| {
                            (model.base_prediction(x) - y.value()).abs() / scale
                        })
                        .collect();
                    let tau = soft_quantile(&observed, q_level, cfg.soft_sort_temperature);
                    let total: f64 = scales
                        .iter()
                        .map(|scale| match cfg.regression_loss {
                            RegressionLoss::LogFullRadius => (tau * scale + LOG_EPS).ln(),
                            RegressionLoss::LogUTau => {
                                (tau * ((scale - 1.0).max(0.0) + 1e-6) + LOG_EPS).ln()
                            }
                        })
                        .sum();
                    total / data.len() as f64
                }
            }
        })
        .collect();
    per_sample.iter().sum::<f64>() / noises.len() as f64
}
