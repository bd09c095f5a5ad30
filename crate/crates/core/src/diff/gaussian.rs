//! Diagonal Gaussian distributions over parameter vectors.
//!
//! The variance is carried as log σ so positivity holds by construction and
//! gradients flow through an unconstrained parametrization.

use super::params::ParamVector;
use super::tape::{Tape, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// N(μ, diag(σ²)) with σ = exp(log_sigma), used for both prior and posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mu: ParamVector,
    pub log_sigma: ParamVector,
}

impl DiagGaussian {
    pub fn new(mu: ParamVector, log_sigma: ParamVector) -> Self {
        assert!(mu.same_layout(&log_sigma), "mu/log_sigma layout mismatch");
        DiagGaussian { mu, log_sigma }
    }

    /// Point-mass-like distribution: σ = exp(log_sigma) constant everywhere.
    pub fn isotropic(mu: ParamVector, log_sigma: f64) -> Self {
        let ls = mu.map(|_| log_sigma);
        DiagGaussian { mu, log_sigma: ls }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.values().iter().map(|&l| l.exp()).collect()
    }

    /// Draw a standard-normal noise vector of matching dimension.
    pub fn sample_noise<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// θ = μ + σ ⊙ ζ for a given noise vector (no gradients).
pub fn reparam_sample(q: &DiagGaussian, noise: &[f64]) -> ParamVector {
    assert_eq!(noise.len(), q.dim(), "noise length mismatch");
    let values = q
        .mu
        .values()
        .iter()
        .zip(q.log_sigma.values())
        .zip(noise)
        .map(|((&m, &ls), &z)| m + ls.exp() * z)
        .collect();
    q.mu.with_values(values)
}

/// Tape version of the reparametrized sample: gradients flow to μ with
/// coefficient 1 and to log σ with coefficient σ ⊙ ζ.
pub fn reparam_sample_on_tape(tape: &mut Tape, mu: Var, log_sigma: Var, noise: &[f64]) -> Var {
    let zeta = tape.leaf(noise.to_vec());
    let sigma = tape.exp(log_sigma);
    let scaled = tape.mul(sigma, zeta);
    tape.add(mu, scaled)
}

/// Analytic KL(Q‖P) between diagonal Gaussians with identical layouts:
/// Σ_i [ ln(σp_i/σq_i) + (σq_i² + (μq_i − μp_i)²) / (2σp_i²) − ½ ].
pub fn gaussian_kl(q: &DiagGaussian, p: &DiagGaussian) -> f64 {
    assert!(q.mu.same_layout(&p.mu), "distribution layout mismatch");
    let mut total = 0.0;
    for i in 0..q.dim() {
        let (mq, lq) = (q.mu.values()[i], q.log_sigma.values()[i]);
        let (mp, lp) = (p.mu.values()[i], p.log_sigma.values()[i]);
        let var_q = (2.0 * lq).exp();
        let var_p = (2.0 * lp).exp();
        total += (lp - lq) + (var_q + (mq - mp) * (mq - mp)) / (2.0 * var_p) - 0.5;
    }
    total
}

/// Tape version of the analytic KL, differentiable in the posterior leaves.
/// The prior enters as constants.
pub fn gaussian_kl_on_tape(
    tape: &mut Tape,
    mu_q: Var,
    log_sigma_q: Var,
    prior: &DiagGaussian,
) -> Var {
    let mu_p = tape.leaf(prior.mu.values().to_vec());
    let log_sigma_p = tape.leaf(prior.log_sigma.values().to_vec());

    let delta = tape.sub(mu_q, mu_p);
    let delta_sq = tape.square(delta);
    let sigma_q = tape.exp(log_sigma_q);
    let var_q = tape.square(sigma_q);
    let numer = tape.add(var_q, delta_sq);

    // 1/(2σp²) as a constant vector.
    let inv_two_var_p: Vec<f64> = prior
        .log_sigma
        .values()
        .iter()
        .map(|&lp| 0.5 * (-2.0 * lp).exp())
        .collect();
    let inv = tape.leaf(inv_two_var_p);
    let quad = tape.mul(numer, inv);

    let log_ratio = tape.sub(log_sigma_p, log_sigma_q);
    let per_coord0 = tape.add(log_ratio, quad);
    let per_coord = tape.offset(per_coord0, -0.5);
    tape.sum(per_coord)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::Layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn gaussian(mu: Vec<f64>, log_sigma: Vec<f64>) -> DiagGaussian {
        let layout = Arc::new(Layout::new(vec![("theta".into(), vec![mu.len()])]));
        DiagGaussian::new(
            ParamVector::new(layout.clone(), mu),
            ParamVector::new(layout, log_sigma),
        )
    }

    #[test]
    fn zero_noise_returns_mean() {
        let q = gaussian(vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0]);
        let theta = reparam_sample(&q, &[0.0, 0.0, 0.0]);
        assert_eq!(theta.values(), q.mu.values());
    }

    #[test]
    fn vanishing_sigma_returns_mean_for_any_noise() {
        let q = gaussian(vec![1.0, -2.0], vec![-400.0, -400.0]);
        let theta = reparam_sample(&q, &[3.0, -7.0]);
        assert!((theta.values()[0] - 1.0).abs() < 1e-12);
        assert!((theta.values()[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn sample_moments_match() {
        let q = gaussian(vec![0.5, -1.0], vec![0.0, -0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut mean = [0.0f64; 2];
        let mut m2 = [0.0f64; 2];
        for _ in 0..n {
            let noise = q.sample_noise(&mut rng);
            let theta = reparam_sample(&q, &noise);
            for i in 0..2 {
                mean[i] += theta.values()[i];
                m2[i] += theta.values()[i] * theta.values()[i];
            }
        }
        for i in 0..2 {
            mean[i] /= n as f64;
            let var = m2[i] / n as f64 - mean[i] * mean[i];
            let sigma = q.log_sigma.values()[i].exp();
            let se_mean = sigma / (n as f64).sqrt();
            assert!(
                (mean[i] - q.mu.values()[i]).abs() < 3.0 * se_mean,
                "mean[{i}] off: {}",
                mean[i]
            );
            let se_var = sigma * sigma * (2.0 / n as f64).sqrt();
            assert!(
                (var - sigma * sigma).abs() < 3.0 * se_var,
                "var[{i}] off: {var}"
            );
        }
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let q = gaussian(vec![0.3, -0.7], vec![0.1, -0.2]);
        assert!(gaussian_kl(&q, &q).abs() < 1e-15);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let q = gaussian(vec![1.0], vec![0.0]);
        let p = gaussian(vec![0.0], vec![0.0]);
        assert!((gaussian_kl(&q, &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_nonnegative_and_zero_iff_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let q = gaussian(
                (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let p = gaussian(
                (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let kl = gaussian_kl(&q, &p);
            assert!(kl >= 0.0);
            let same = q.mu.values() == p.mu.values()
                && q.log_sigma.values() == p.log_sigma.values();
            if kl < 1e-12 {
                assert!(same);
            }
        }
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[ln q(θ) − ln p(θ)] over 10^6 samples.
        let q = gaussian(vec![0.4, -0.3, 0.0], vec![-0.2, 0.1, 0.0]);
        let p = gaussian(vec![0.0, 0.2, -0.1], vec![0.0, -0.1, 0.3]);
        let analytic = gaussian_kl(&q, &p);

        let ln_density = |g: &DiagGaussian, x: &[f64]| -> f64 {
            let mut total = 0.0;
            for (i, &xi) in x.iter().enumerate() {
                let (m, ls) = (g.mu.values()[i], g.log_sigma.values()[i]);
                let z = (xi - m) / ls.exp();
                total += -ls - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
            total
        };

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let noise = q.sample_noise(&mut rng);
            let theta = reparam_sample(&q, &noise);
            let d = ln_density(&q, theta.values()) - ln_density(&p, theta.values());
            sum += d;
            sum_sq += d * d;
        }
        let est = sum / n as f64;
        let var = sum_sq / n as f64 - est * est;
        let se = (var / n as f64).sqrt();
        assert!(
            (est - analytic).abs() < 3.0 * se,
            "MC {est} vs analytic {analytic} (se {se})"
        );
    }

    #[test]
    fn tape_kl_and_reparam_match_plain() {
        let q = gaussian(vec![0.4, -0.3], vec![-0.2, 0.1]);
        let p = gaussian(vec![0.0, 0.2], vec![0.0, -0.1]);
        let noise = vec![0.7, -1.3];

        let mut tape = Tape::new();
        let mu = tape.leaf(q.mu.values().to_vec());
        let ls = tape.leaf(q.log_sigma.values().to_vec());
        let theta = reparam_sample_on_tape(&mut tape, mu, ls, &noise);
        let kl = gaussian_kl_on_tape(&mut tape, mu, ls, &p);

        assert_eq!(tape.value(theta), reparam_sample(&q, &noise).values());
        assert!((tape.scalar(kl) - gaussian_kl(&q, &p)).abs() < 1e-14);
    }
}
