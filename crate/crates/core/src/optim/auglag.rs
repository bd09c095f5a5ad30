//! Augmented-Lagrangian optimization of the posterior under the KL budget.
//!
//! Each outer round approximately minimizes
//!     L_aug(μ, Σ, s) = L̂_eff(μ, Σ) + λ·c + (ρ/2)·c²,
//!     c(μ, Σ, s) = KL(Q‖P) − budget + s,   s ≥ 0,
//! by stochastic gradient steps over (μ, log σ, s) with the slack projected
//! back to the nonnegative half-line, then updates λ ← λ + ρ·c. The penalty
//! weight doubles after any round that ends in violation. Among the iterates
//! inspected at round boundaries, the feasible one with the lowest frozen
//! evaluation loss over the full dataset is returned.

use super::loss::{eval_loss_frozen, loss_and_grads, sample_minibatch};
use super::update::Updater;
use super::{AugLagState, OptimConfig, OptimError};
use crate::bounds::kl_budget;
use crate::conformal::{LabeledData, ScoreModel};
use crate::diff::gaussian::{gaussian_kl, gaussian_kl_on_tape, DiagGaussian};
use crate::diff::tape::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One row of the per-step diagnostics trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer: usize,
    pub step: usize,
    pub loss: f64,
    pub kl: f64,
    pub lambda: f64,
    pub rho: f64,
}

/// Result of a constrained posterior optimization.
#[derive(Debug, Clone)]
pub struct PosteriorOutcome {
    pub q: DiagGaussian,
    /// KL(Q‖P) of the returned posterior.
    pub kl_qp: f64,
    /// The budget the run was constrained to.
    pub budget: f64,
    /// Whether the returned posterior carries a coverage certificate
    /// (KL ≤ budget with budget ≥ 0).
    pub feasible: bool,
    /// Set when the search had to fall back to the prior.
    pub warning: Option<String>,
    pub trace: Vec<TraceRow>,
}

/// Constrained optimization with the budget derived from
/// `kl_budget(cfg.alpha, alpha_hat, cfg.delta, n)`.
pub fn optimize_posterior(
    prior: &DiagGaussian,
    model: &ScoreModel,
    data: &LabeledData,
    cfg: &OptimConfig,
    alpha_hat: f64,
    seed: u64,
) -> Result<PosteriorOutcome, OptimError> {
    let budget = kl_budget(cfg.alpha, alpha_hat, cfg.delta, data.len())?;
    Ok(optimize_posterior_with_budget(
        prior, model, data, cfg, alpha_hat, budget, seed,
    ))
}

/// Constrained optimization against an explicit budget. An infinite budget
/// disables the constraint entirely (plain stochastic minimization); a
/// non-positive budget short-circuits to the prior, since Q = P is then the
/// only point with any certificate left.
#[allow(clippy::too_many_arguments)]
pub fn optimize_posterior_with_budget(
    prior: &DiagGaussian,
    model: &ScoreModel,
    data: &LabeledData,
    cfg: &OptimConfig,
    alpha_hat: f64,
    budget: f64,
    seed: u64,
) -> PosteriorOutcome {
    assert!(!data.is_empty(), "empty optimization dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = prior.dim();

    if budget <= 0.0 {
        return PosteriorOutcome {
            q: prior.clone(),
            kl_qp: 0.0,
            budget,
            feasible: budget >= 0.0,
            warning: (budget < 0.0).then(|| "non-positive KL budget".to_string()),
            trace: vec![],
        };
    }
    let constrained = budget.is_finite();

    let mut q = prior.clone();
    let mut state = AugLagState::new(cfg.rho_init);
    if constrained {
        // Start the slack at the budget so the equality constraint
        // c = KL - budget + s holds at the initial point; otherwise the
        // quadratic penalty pushes KL outward until the slack catches up.
        state.slack = budget;
    }

    // Frozen noise for the comparable evaluation pass, drawn once.
    let eval_noises: Vec<Vec<f64>> = (0..cfg.eval_theta_samples)
        .map(|_| q.sample_noise(&mut rng))
        .collect();

    // The prior itself is feasible (KL = 0): it is the initial candidate.
    let prior_eval = eval_loss_frozen(prior, model, data, alpha_hat, cfg, &eval_noises);
    if prior_eval.is_finite() {
        state.best_feasible = Some((prior.clone(), prior_eval));
    }

    let mut trace = Vec::new();
    for outer in 0..cfg.outer_iterations {
        let mut up_mu = Updater::new(cfg.optimizer, cfg.learning_rate, dim);
        let mut up_ls = Updater::new(cfg.optimizer, cfg.learning_rate, dim);
        let mut up_slack = Updater::new(cfg.optimizer, cfg.learning_rate, 1);

        for step in 0..cfg.inner_steps {
            let batch = sample_minibatch(data, cfg.minibatch, &mut rng);
            let noises: Vec<Vec<f64>> = (0..cfg.theta_samples)
                .map(|_| q.sample_noise(&mut rng))
                .collect();
            let (loss, mut g_mu, mut g_ls) =
                loss_and_grads(&q, model, &batch, alpha_hat, cfg, &noises);
            if !loss.is_finite() {
                // A diverged sample poisons the gradients; skip the step.
                if cfg.record_trace {
                    trace.push(TraceRow {
                        outer,
                        step,
                        loss,
                        kl: gaussian_kl(&q, prior),
                        lambda: state.lambda,
                        rho: state.rho,
                    });
                }
                continue;
            }

            let mut kl_now = 0.0;
            if constrained {
                // Constraint terms on their own small tape.
                let mut tape = Tape::new();
                let mu_v = tape.leaf(q.mu.values().to_vec());
                let ls_v = tape.leaf(q.log_sigma.values().to_vec());
                let kl_v = gaussian_kl_on_tape(&mut tape, mu_v, ls_v, prior);
                let slack_v = tape.leaf_scalar(state.slack);
                let c0 = tape.add(kl_v, slack_v);
                let c = tape.offset(c0, -budget);
                let lin = tape.scale(c, state.lambda);
                let c_sq = tape.square(c);
                let quad = tape.scale(c_sq, 0.5 * state.rho);
                let aug = tape.add(lin, quad);
                let grads = tape.backward(aug);
                kl_now = tape.scalar(kl_v);

                let gm = grads.wrt(mu_v);
                let gl = grads.wrt(ls_v);
                for i in 0..dim {
                    g_mu[i] += gm[i];
                    g_ls[i] += gl[i];
                }
                let mut slack_arr = [state.slack];
                up_slack.step(&mut slack_arr, &[grads.wrt_scalar(slack_v)]);
                state.slack = slack_arr[0].max(0.0);
            }

            up_mu.step(q.mu.values_mut(), &g_mu);
            up_ls.step(q.log_sigma.values_mut(), &g_ls);

            if cfg.record_trace {
                trace.push(TraceRow {
                    outer,
                    step,
                    loss,
                    kl: kl_now,
                    lambda: state.lambda,
                    rho: state.rho,
                });
            }
        }

        let kl_end = gaussian_kl(&q, prior);
        if constrained {
            let c_end = kl_end - budget + state.slack;
            state.lambda = (state.lambda + state.rho * c_end).max(0.0);
            if kl_end > budget {
                state.rho *= 2.0;
            }
        }

        // Candidate selection: feasible iterates compete on the frozen
        // evaluation loss over all of the data.
        if !constrained || kl_end <= budget {
            let eval = eval_loss_frozen(&q, model, data, alpha_hat, cfg, &eval_noises);
            let better = match &state.best_feasible {
                Some((_, best)) => eval < *best,
                None => true,
            };
            if eval.is_finite() && better {
                state.best_feasible = Some((q.clone(), eval));
            }
        }
    }

    match state.best_feasible {
        Some((best_q, _)) => {
            let kl_qp = gaussian_kl(&best_q, prior);
            PosteriorOutcome {
                q: best_q,
                kl_qp,
                budget,
                feasible: true,
                warning: None,
                trace,
            }
        }
        None => PosteriorOutcome {
            q: prior.clone(),
            kl_qp: 0.0,
            budget,
            feasible: true,
            warning: Some("no feasible iterate found; returning the prior".to_string()),
            trace,
        },
    }
}
