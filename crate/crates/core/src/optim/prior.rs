//! Data-informed prior tuning on the held-out split D₀.

use super::loss::{loss_and_grads, sample_minibatch};
use super::update::Updater;
use super::{OptimConfig, PriorMode};
use crate::conformal::{LabeledData, ScoreModel};
use crate::diff::gaussian::DiagGaussian;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Unconstrained minimization of the sampled efficiency loss over the prior
/// parameters: mean only (`TuneMean`) or mean and log-variance
/// (`TuneMeanVar`). `Fixed` returns the initialization unchanged. The result
/// becomes the prior P of the constrained posterior optimization, so it must
/// only ever see D₀.
pub fn tune_prior(
    init: &DiagGaussian,
    model: &ScoreModel,
    d0: &LabeledData,
    cfg: &OptimConfig,
    alpha_hat: f64,
    seed: u64,
) -> DiagGaussian {
    if cfg.prior_mode == PriorMode::Fixed || d0.is_empty() {
        return init.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = init.dim();
    let mut p = init.clone();
    let mut up_mu = Updater::new(cfg.optimizer, cfg.learning_rate, dim);
    let mut up_ls = Updater::new(cfg.optimizer, cfg.learning_rate, dim);

    for _ in 0..cfg.inner_steps {
        let batch = sample_minibatch(d0, cfg.minibatch, &mut rng);
        let noises: Vec<Vec<f64>> = (0..cfg.theta_samples)
            .map(|_| p.sample_noise(&mut rng))
            .collect();
        let (_, g_mu, g_ls) = loss_and_grads(&p, model, &batch, alpha_hat, cfg, &noises);
        up_mu.step(p.mu.values_mut(), &g_mu);
        if cfg.prior_mode == PriorMode::TuneMeanVar {
            up_ls.step(p.log_sigma.values_mut(), &g_ls);
        }
    }
    p
}
