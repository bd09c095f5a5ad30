//! Closed-form bound calculus for PAC-calibrated conformal prediction.
//!
//! Everything here is a pure function of its inputs: the Bernoulli KL and its
//! upper inverse, the two classic PAC calibration corrections (a Hoeffding
//! shift and the tighter binomial-tail condition), the log of the Beta-pdf
//! constant that enters the PAC-Bayes coverage bound, the coverage and
//! efficiency certificates themselves, and the KL budget obtained by
//! inverting the coverage bound at the target rate.
//!
//! Conventions: `n` is the calibration set size, `alpha` the target test-time
//! miscoverage, `alpha_hat` the empirical miscoverage used for calibration,
//! `delta`/`gamma` certificate failure probabilities, and `kl_qp` the KL
//! divergence of the posterior from the prior over score-function parameters.

mod special;

use crate::counts::floor_count;

pub use special::{ln_beta, ln_gamma, reg_inc_beta};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bisection tolerance for `kl_inverse_upper`.
const KL_INV_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error(
        "calibration set too small for this guarantee (alpha={alpha}, delta={delta}, n={n})"
    )]
    CalibrationTooSmall { alpha: f64, delta: f64, n: usize },
    #[error("empirical rate alpha_hat={alpha_hat} requires n > 1/alpha_hat - 1, got n={n}")]
    EmpiricalRateInfeasible { alpha_hat: f64, n: usize },
    #[error("invalid bound inputs: {reason}")]
    InvalidInputs { reason: String },
}

/// Inputs shared by every certificate computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Target miscoverage rate in (0, 1).
    pub alpha: f64,
    /// Empirical miscoverage rate used for calibration, in (0, alpha].
    pub alpha_hat: f64,
    /// Certificate failure probability in (0, 1).
    pub delta: f64,
    /// Calibration set size.
    pub n: usize,
    /// KL(Q‖P), non-negative.
    pub kl_qp: f64,
}

impl BoundInputs {
    // Negated comparisons are NaN guards: `!(x >= 0)` rejects NaN, `x < 0`
    // would let it through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), BoundError> {
        let fail = |reason: String| Err(BoundError::InvalidInputs { reason });
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha={} outside (0,1)", self.alpha));
        }
        if !(self.alpha_hat > 0.0 && self.alpha_hat <= self.alpha) {
            return fail(format!(
                "alpha_hat={} outside (0, alpha={}]",
                self.alpha_hat, self.alpha
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta={} outside (0,1)", self.delta));
        }
        if !(self.kl_qp >= 0.0) {
            return fail(format!("kl_qp={} negative or NaN", self.kl_qp));
        }
        if self.n as f64 <= 1.0 / self.alpha_hat - 1.0 {
            return Err(BoundError::EmpiricalRateInfeasible {
                alpha_hat: self.alpha_hat,
                n: self.n,
            });
        }
        Ok(())
    }
}

/// A high-probability upper bound on randomized test-time miscoverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageCertificate {
    /// Upper bound on the expected miscoverage rate.
    pub upper_bound: f64,
    /// The empirical reference rate (⌊(N+1)α̂⌋ − 1)/(N − 1).
    pub empirical_rate: f64,
    /// Radius of the Bernoulli-KL ball around the empirical rate.
    pub kl_radius: f64,
}

/// A high-probability upper bound on expected prediction-set inefficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCertificate {
    /// upper_bound = empirical_mean + lipschitz_term + kl_term.
    pub upper_bound: f64,
    /// Mean efficiency loss observed on calibration data, in [0, 1].
    pub empirical_mean: f64,
    /// 2βL_τ/√N.
    pub lipschitz_term: f64,
    /// √(½KL + ½ln(2N/γ)) / √(N−1).
    pub kl_term: f64,
}

/// KL divergence between Bernoulli(p) and Bernoulli(q), in nats.
///
/// Follows the 0·ln(0/·) = 0 convention; +∞ is returned when q ∈ {0, 1} and
/// the corresponding term of p is nonzero (absolute-continuity failure).
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
    let mut kl = 0.0;
    if p > 0.0 {
        if q == 0.0 {
            return f64::INFINITY;
        }
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        if q == 1.0 {
            return f64::INFINITY;
        }
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    kl
}

/// Largest q ∈ [p, 1] with `bernoulli_kl(p, q) <= c`, by bisection.
///
/// This inverts the KL bound in its upper direction; `c = 0` returns `p`
/// and the result approaches 1 as `c → ∞`. After the 1e-12 bisection a
/// log-space polish pass tightens the residual kl(p, q) to within 1e-9 of c:
/// near q = 1 the KL slope is ~1/(1−q), so plain bisection alone cannot
/// guarantee that.
pub fn kl_inverse_upper(p: f64, c: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p) && c >= 0.0 && c.is_finite());
    if c <= 0.0 {
        return p;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mut lo = p;
    let mut hi = 1.0;
    while hi - lo > KL_INV_TOL {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(p, mid) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if bernoulli_kl(p, lo) >= c - 1e-9 {
        return lo;
    }
    // Polish in s = 1 − q: kl has slope (q−p)/q ≤ 1 in ln s, so geometric
    // bisection converges to the target in c-space.
    let mut s_big = 1.0 - lo;
    let mut s_small = if hi >= 1.0 { 1e-300 } else { 1.0 - hi };
    for _ in 0..200 {
        if bernoulli_kl(p, 1.0 - s_big) >= c - 1e-9 || s_big / s_small < 1.0 + 1e-12 {
            break;
        }
        let s_mid = (s_big * s_small).sqrt();
        if bernoulli_kl(p, 1.0 - s_mid) <= c {
            s_big = s_mid;
        } else {
            s_small = s_mid;
        }
    }
    1.0 - s_big
}

/// Hoeffding-style calibration correction: α̂ = α − √(−ln δ / 2N).
///
/// Calibrating at this empirical rate guarantees test miscoverage below α
/// with probability ≥ 1 − δ over the calibration draw.
pub fn vovk_2a_alpha_hat(alpha: f64, delta: f64, n: usize) -> Result<f64, BoundError> {
    debug_assert!(n >= 1);
    let alpha_hat = alpha - (-(delta.ln()) / (2.0 * n as f64)).sqrt();
    if alpha_hat <= 0.0 {
        return Err(BoundError::CalibrationTooSmall { alpha, delta, n });
    }
    Ok(alpha_hat)
}

/// Binomial-tail calibration correction: the largest α̂ ∈ (0, α) with
/// δ ≥ I_{1−α}(N − ⌊α̂(N+1) − 1⌋, ⌊α̂(N+1) − 1⌋ + 1).
///
/// The condition depends on α̂ only through k = ⌊(N+1)α̂⌋, so the search
/// enumerates k downward from ⌊(N+1)α⌋ instead of gridding α̂. The returned
/// value is the largest representable α̂ below both α and the right edge of
/// the feasible k-interval, so that recomputing ⌊(N+1)α̂⌋ recovers k.
pub fn vovk_2b_alpha_hat(alpha: f64, delta: f64, n: usize) -> Result<f64, BoundError> {
    debug_assert!(n >= 1);
    let n_f = n as f64;
    let k_cap = floor_count((n_f + 1.0) * alpha) as i64;
    let mut k_best: Option<i64> = None;
    for k in (1..=k_cap).rev() {
        // Conditional miscoverage at this k follows Beta(k, N+1-k); the
        // failure chance P[miscoverage > alpha] is its upper tail.
        let tail = reg_inc_beta(n_f + 1.0 - k as f64, k as f64, 1.0 - alpha);
        if tail <= delta {
            k_best = Some(k);
            break;
        }
    }
    let k = k_best.ok_or(BoundError::CalibrationTooSmall { alpha, delta, n })?;
    // Largest alpha_hat strictly below alpha that still maps to this k.
    let mut alpha_hat = alpha
        .min((k as f64 + 1.0) / (n_f + 1.0))
        .next_down();
    while (floor_count((n_f + 1.0) * alpha_hat) as i64) > k {
        alpha_hat = alpha_hat.next_down();
    }
    if alpha_hat <= 0.0 {
        return Err(BoundError::CalibrationTooSmall { alpha, delta, n });
    }
    Ok(alpha_hat)
}

/// ln B(N) where B(N) is the Beta(k, N+1−k) density at (k−1)/(N−1), with
/// k = ⌊(N+1)α̂⌋. Computed in log space via log-gamma.
pub fn log_b_constant(alpha_hat: f64, n: usize) -> Result<f64, BoundError> {
    let n_f = n as f64;
    let k = floor_count((n_f + 1.0) * alpha_hat);
    if k < 1.0 || k > n_f {
        return Err(BoundError::EmpiricalRateInfeasible { alpha_hat, n });
    }
    let a = (k - 1.0) / (n_f - 1.0);
    let ln_norm = -ln_beta(k, n_f + 1.0 - k);
    // 0·ln 0 terms at the k = 1 and k = N endpoints are zero by convention.
    let mut ln_pdf = ln_norm;
    if k > 1.0 {
        ln_pdf += (k - 1.0) * a.ln();
    }
    if k < n_f {
        ln_pdf += (n_f - k) * (1.0 - a).ln();
    }
    Ok(ln_pdf)
}

/// Invert the PAC-Bayes coverage bound: an upper bound on expected
/// test-time miscoverage for any posterior at KL divergence `kl_qp` from the
/// prior, holding with probability ≥ 1 − δ.
pub fn coverage_upper_bound(b: &BoundInputs) -> Result<CoverageCertificate, BoundError> {
    b.validate()?;
    let n_f = b.n as f64;
    let k = floor_count((n_f + 1.0) * b.alpha_hat);
    let empirical_rate = (k - 1.0) / (n_f - 1.0);
    let log_b = log_b_constant(b.alpha_hat, b.n)?;
    let kl_radius = (b.kl_qp + log_b + (1.0 / b.delta).ln()) / (n_f - 1.0);
    let upper_bound = kl_inverse_upper(empirical_rate, kl_radius);
    Ok(CoverageCertificate {
        upper_bound,
        empirical_rate,
        kl_radius,
    })
}

/// KL budget: the largest KL(Q‖P) for which the coverage bound still
/// certifies test miscoverage ≤ α at empirical rate α̂.
///
/// The value may be negative, meaning no posterior other than the prior is
/// certifiable at this (α̂, δ, N); callers decide how to handle that.
pub fn kl_budget(alpha: f64, alpha_hat: f64, delta: f64, n: usize) -> Result<f64, BoundError> {
    debug_assert!(alpha_hat <= alpha, "budget is meaningful only for alpha_hat <= alpha");
    let n_f = n as f64;
    let k = floor_count((n_f + 1.0) * alpha_hat);
    if k < 1.0 {
        return Err(BoundError::EmpiricalRateInfeasible { alpha_hat, n });
    }
    let empirical_rate = (k - 1.0) / (n_f - 1.0);
    let log_b = log_b_constant(alpha_hat, n)?;
    Ok((n_f - 1.0) * bernoulli_kl(empirical_rate, alpha) - log_b - (1.0 / delta).ln())
}

/// Largest α̂ ≤ α at which the KL budget is still non-negative, i.e. the
/// zero crossing of `kl_budget` in α̂ for fixed (α, δ, N).
///
/// The budget is a step function of k = ⌊(N+1)α̂⌋, so the crossing is
/// reported as the right edge of the last non-negative step.
pub fn budget_boundary_alpha_hat(alpha: f64, delta: f64, n: usize) -> Option<f64> {
    let n_f = n as f64;
    let k_cap = floor_count((n_f + 1.0) * alpha) as i64;
    let mut best: Option<i64> = None;
    for k in (1..=k_cap).rev() {
        let alpha_hat = k as f64 / (n_f + 1.0);
        match kl_budget(alpha, alpha_hat.min(alpha), delta, n) {
            Ok(b) if b >= 0.0 => {
                best = Some(k);
                break;
            }
            _ => {}
        }
    }
    best.map(|k| ((k + 1) as f64 / (n_f + 1.0)).min(alpha))
}

/// PAC-Bayes upper bound on expected efficiency loss:
/// empirical + 2βL_τ/√N + √(½KL + ½ln(2N/γ))/√(N−1).
pub fn efficiency_upper_bound(
    empirical_mean: f64,
    kl_qp: f64,
    beta: f64,
    l_tau: f64,
    n: usize,
    gamma: f64,
) -> EfficiencyCertificate {
    debug_assert!(n >= 2 && beta > 0.0 && l_tau > 0.0 && gamma > 0.0);
    let n_f = n as f64;
    let lipschitz_term = 2.0 * beta * l_tau / n_f.sqrt();
    let kl_term = (0.5 * kl_qp + 0.5 * (2.0 * n_f / gamma).ln()).sqrt() / (n_f - 1.0).sqrt();
    EfficiencyCertificate {
        upper_bound: empirical_mean + lipschitz_term + kl_term,
        empirical_mean,
        lipschitz_term,
        kl_term,
    }
}
