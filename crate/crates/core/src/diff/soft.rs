//! Hard and soft order statistics, and the soft set-size relaxation.
//!
//! The soft quantile follows the soft-sort construction: the row of the
//! unimodal row-stochastic matrix for the target rank is a softmax over
//! negative squared distances between the (hard) rank-th order statistic and
//! the scores, at a given temperature. As the temperature goes to zero the
//! row concentrates on the order statistic itself.

use super::tape::{Tape, Var};
use crate::counts::ceil_count;

/// 1-based rank ⌈q·n⌉ for q ∈ (0, 1], clamped into [1, n].
fn quantile_rank(n: usize, q: f64) -> usize {
    debug_assert!(q > 0.0);
    (ceil_count(q * n as f64) as usize).clamp(1, n)
}

fn argsort_ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// The ⌈(n+1)(1−α̂)⌉-th smallest score, or +∞ when that index exceeds n
/// (an infinite threshold means "predict everything").
pub fn hard_quantile_threshold(scores: &[f64], alpha_hat: f64) -> f64 {
    assert!(!scores.is_empty(), "empty score vector");
    let n = scores.len();
    let m = ceil_count((n as f64 + 1.0) * (1.0 - alpha_hat)) as usize;
    if m > n {
        return f64::INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted[m - 1]
}

/// Differentiable relaxation of the ⌈q·n⌉-th order statistic.
pub fn soft_quantile(scores: &[f64], q: f64, temperature: f64) -> f64 {
    assert!(!scores.is_empty() && temperature > 0.0);
    let rank = quantile_rank(scores.len(), q);
    let order = argsort_ascending(scores);
    let anchor = scores[order[rank - 1]];
    let logits: Vec<f64> = scores
        .iter()
        .map(|&s| -(anchor - s) * (anchor - s) / temperature)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .zip(scores)
        .map(|(&w, &s)| w / total * s)
        .sum()
}

/// Tape version of [`soft_quantile`]; gradients flow through the anchor
/// (fixed permutation) and through every score via the softmax row.
pub fn soft_quantile_on_tape(tape: &mut Tape, scores: Var, q: f64, temperature: f64) -> Var {
    let values = tape.value(scores).to_vec();
    assert!(!values.is_empty() && temperature > 0.0);
    let n = values.len();
    let rank = quantile_rank(n, q);
    let order = argsort_ascending(&values);
    let anchor = tape.index(scores, order[rank - 1]);
    let rep = tape.repeat(anchor, n);
    let diff = tape.sub(rep, scores);
    let sq = tape.square(diff);
    let logits = tape.scale(sq, -1.0 / temperature);
    let weights = tape.softmax(logits);
    tape.dot(weights, scores)
}

/// Smoothed set size Σ_y σ((τ − s_y)/T): a sum of sigmoid memberships,
/// strictly inside (0, K).
pub fn soft_set_size(scores_per_label: &[f64], tau: f64, temperature: f64) -> f64 {
    assert!(!scores_per_label.is_empty() && temperature > 0.0);
    scores_per_label
        .iter()
        .map(|&s| {
            let z = (tau - s) / temperature;
            if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            }
        })
        .sum()
}

/// Tape version of [`soft_set_size`] with both the scores and τ on the tape.
pub fn soft_set_size_on_tape(tape: &mut Tape, scores: Var, tau: Var, temperature: f64) -> Var {
    let k = tape.value(scores).len();
    let rep = tape.repeat(tau, k);
    let diff = tape.sub(rep, scores);
    let scaled = tape.scale(diff, 1.0 / temperature);
    let members = tape.sigmoid(scaled);
    tape.sum(members)
}
