//! Grid search over empirical rates with a union bound across runs.
//!
//! Each α̂ in the grid gets its own constrained run at failure probability
//! δ' = δ/|grid|, so the efficiency certificate of the selected run holds at
//! the original δ uniformly over the selection. Runs whose α̂ exceeds the
//! target rate or whose KL budget is non-positive are recorded as infeasible;
//! if every run is infeasible the caller falls back to standard ICP.

use super::auglag::{optimize_posterior_with_budget, PosteriorOutcome};
use super::prior::tune_prior;
use super::{OptimConfig, OptimError};
use crate::bounds::{efficiency_upper_bound, kl_budget, EfficiencyCertificate};
use crate::conformal::{
    build_randomized_predictor, CalibratedPredictor, LabeledData, ScoreKind, ScoreModel,
};
use crate::diff::gaussian::DiagGaussian;
use crate::diff::soft::soft_set_size;

/// One grid cell: the constrained run at a single empirical rate.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub alpha_hat: f64,
    pub delta_run: f64,
    pub budget: f64,
    pub feasible: bool,
    pub kl_qp: f64,
    /// Mean efficiency loss on D_N mapped into [0, 1].
    pub empirical_eff: f64,
    pub beta_used: f64,
    pub l_tau_used: f64,
    pub certificate: Option<EfficiencyCertificate>,
    pub predictor: Option<CalibratedPredictor>,
    pub outcome: Option<PosteriorOutcome>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub runs: Vec<GridRun>,
    /// Index of the feasible run with the smallest certificate, if any.
    pub best: Option<usize>,
    pub delta_per_run: f64,
}

impl GridSearchResult {
    pub fn best_run(&self) -> Option<&GridRun> {
        self.best.map(|i| &self.runs[i])
    }
}

/// Deterministic seed derivation for sub-tasks (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Empirical efficiency of a randomized predictor on its calibration split,
/// mapped into [0, 1], together with the default (β, L_τ) pair for the
/// certificate: β is the largest observed calibration score; L_τ is 1/(4T)
/// for the normalized sigmoid set size, or the measured width slope bound
/// for regression.
pub fn empirical_efficiency01(
    pred: &CalibratedPredictor,
    data: &LabeledData,
    cfg: &OptimConfig,
) -> (f64, f64, f64) {
    let model = &pred.model;
    let mut eff_total = 0.0;
    let mut eff_count = 0usize;
    let mut beta_est = 0.0f64;
    let mut l_tau_est = 0.0f64;
    for (theta, tau) in &pred.samples {
        match model.kind {
            ScoreKind::ClassificationLogProb => {
                let k = model.n_classes() as f64;
                for x in &data.xs {
                    let scores = model.class_scores(theta, x);
                    for &s in &scores {
                        beta_est = beta_est.max(s);
                    }
                    eff_total += soft_set_size(&scores, *tau, cfg.set_size_temperature) / k;
                    eff_count += 1;
                }
                l_tau_est = 1.0 / (4.0 * cfg.set_size_temperature);
            }
            ScoreKind::RegressionScaled => {
                let w = cfg.width_scale;
                for (x, y) in data.xs.iter().zip(&data.ys) {
                    let scale = model.score_scale(theta, x);
                    let s = (model.base_prediction(x) - y.value()).abs() / scale;
                    beta_est = beta_est.max(s);
                    let width = 2.0 * tau * scale;
                    eff_total += (width / w).clamp(0.0, 1.0);
                    eff_count += 1;
                    l_tau_est = l_tau_est.max(2.0 * scale / w);
                }
            }
        }
    }
    let eff = eff_total / eff_count.max(1) as f64;
    (eff, beta_est.max(1e-12), l_tau_est.max(1e-12))
}

/// Run the full tune-prior + constrained-posterior pipeline for every α̂ in
/// the grid and return all runs plus the index of the best certificate.
pub fn alpha_hat_grid_search(
    prior_init: &DiagGaussian,
    model: &ScoreModel,
    d0: &LabeledData,
    dn: &LabeledData,
    cfg: &OptimConfig,
    seed: u64,
) -> Result<GridSearchResult, OptimError> {
    assert!(!cfg.alpha_hat_grid.is_empty(), "empty alpha_hat grid");
    if dn.is_empty() {
        return Err(OptimError::DataTooSmall(
            "constrained optimization split is empty".to_string(),
        ));
    }
    let delta_run = cfg.delta / cfg.alpha_hat_grid.len() as f64;
    let n = dn.len();

    let mut runs = Vec::with_capacity(cfg.alpha_hat_grid.len());
    for (i, &alpha_hat) in cfg.alpha_hat_grid.iter().enumerate() {
        // Rates above the target cannot certify coverage ≤ α; treat them as
        // infeasible cells rather than rejecting the whole grid.
        let budget = if alpha_hat <= cfg.alpha {
            kl_budget(cfg.alpha, alpha_hat, delta_run, n).unwrap_or(f64::NEG_INFINITY)
        } else {
            f64::NEG_INFINITY
        };
        if budget <= 0.0 {
            runs.push(GridRun {
                alpha_hat,
                delta_run,
                budget,
                feasible: false,
                kl_qp: 0.0,
                empirical_eff: 1.0,
                beta_used: 0.0,
                l_tau_used: 0.0,
                certificate: None,
                predictor: None,
                outcome: None,
            });
            continue;
        }

        let run_cfg = OptimConfig {
            delta: delta_run,
            ..cfg.clone()
        };
        let prior = tune_prior(
            prior_init,
            model,
            d0,
            &run_cfg,
            alpha_hat,
            derive_seed(seed, 2 * i as u64 + 1),
        );
        let outcome = optimize_posterior_with_budget(
            &prior,
            model,
            dn,
            &run_cfg,
            alpha_hat,
            budget,
            derive_seed(seed, 2 * i as u64 + 2),
        );
        let pred = build_randomized_predictor(
            &outcome.q,
            model,
            dn,
            alpha_hat,
            cfg.eval_pairs,
            derive_seed(seed, 1000 + i as u64),
        )?;
        let (eff, beta_default, l_tau_default) = empirical_efficiency01(&pred, dn, cfg);
        runs.push(GridRun {
            alpha_hat,
            delta_run,
            budget,
            feasible: outcome.feasible,
            kl_qp: outcome.kl_qp,
            empirical_eff: eff,
            beta_used: beta_default,
            l_tau_used: l_tau_default,
            certificate: None,
            predictor: Some(pred),
            outcome: Some(outcome),
        });
    }

    // The score bound β is one constant of the setting, so the certificates
    // that compete in the selection share it (the largest estimate across
    // cells, unless overridden); a per-cell max-statistic would randomize
    // the selection.
    let beta_shared = cfg.beta_bound.unwrap_or_else(|| {
        runs.iter()
            .filter(|r| r.predictor.is_some())
            .map(|r| r.beta_used)
            .fold(1e-12, f64::max)
    });
    let l_tau_shared = cfg.l_tau.unwrap_or_else(|| {
        runs.iter()
            .filter(|r| r.predictor.is_some())
            .map(|r| r.l_tau_used)
            .fold(1e-12, f64::max)
    });
    for run in runs.iter_mut().filter(|r| r.predictor.is_some()) {
        run.beta_used = beta_shared;
        run.l_tau_used = l_tau_shared;
        run.certificate = Some(efficiency_upper_bound(
            run.empirical_eff,
            run.kl_qp,
            beta_shared,
            l_tau_shared,
            n,
            delta_run,
        ));
    }

    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible && r.certificate.is_some())
        .min_by(|(_, a), (_, b)| {
            let ua = a.certificate.as_ref().unwrap().upper_bound;
            let ub = b.certificate.as_ref().unwrap().upper_bound;
            ua.partial_cmp(&ub).unwrap()
        })
        .map(|(i, _)| i);

    Ok(GridSearchResult {
        runs,
        best,
        delta_per_run: delta_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::Target;
    use crate::diff::nn::{Activation, MlpArch, OutputHead};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, n: usize) -> (ScoreModel, DiagGaussian, LabeledData, LabeledData) {
        let arch = MlpArch::new(2, vec![6], 3, Activation::Relu).with_head(OutputHead::LogSoftmax);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch.init_params(&mut rng, false);
        let model = ScoreModel::classification(arch, params.clone());
        let sigma: Vec<f64> = model
            .theta_fan_ins()
            .iter()
            .map(|f| (0.01 / f.sqrt()).sqrt().ln())
            .collect();
        let prior = DiagGaussian::new(params.clone(), params.with_values(sigma));
        let make = |rng: &mut ChaCha8Rng, m: usize| {
            let xs: Vec<Vec<f64>> = (0..m)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let ys: Vec<Target> = xs
                .iter()
                .map(|x| Target::Class(if x[0] > 0.0 { 0 } else { 1 }))
                .collect();
            LabeledData::new(xs, ys)
        };
        let d0 = make(&mut rng, n / 2);
        let dn = make(&mut rng, n);
        (model, prior, d0, dn)
    }

    fn quick_cfg() -> OptimConfig {
        OptimConfig {
            inner_steps: 30,
            outer_iterations: 2,
            minibatch: 16,
            theta_samples: 2,
            eval_theta_samples: 2,
            eval_pairs: 3,
            ..OptimConfig::default_classification()
        }
    }

    #[test]
    fn delta_splits_over_grid() {
        let (model, prior, d0, dn) = setup(1, 400);
        let cfg = OptimConfig {
            alpha_hat_grid: vec![0.02, 0.035, 0.05, 0.065, 0.08],
            ..quick_cfg()
        };
        let res = alpha_hat_grid_search(&prior, &model, &d0, &dn, &cfg, 3).unwrap();
        assert!((res.delta_per_run - 0.01).abs() < 1e-15);
        assert_eq!(res.runs.len(), 5);
    }

    #[test]
    fn best_certificate_is_minimal() {
        let (model, prior, d0, dn) = setup(2, 400);
        let cfg = OptimConfig {
            alpha_hat_grid: vec![0.03, 0.05, 0.08],
            ..quick_cfg()
        };
        let res = alpha_hat_grid_search(&prior, &model, &d0, &dn, &cfg, 4).unwrap();
        let best = res.best_run().expect("some feasible run");
        let best_cert = best.certificate.as_ref().unwrap().upper_bound;
        for run in res.runs.iter().filter(|r| r.feasible) {
            if let Some(c) = &run.certificate {
                assert!(best_cert <= c.upper_bound + 1e-12);
            }
        }
    }

    #[test]
    fn rates_above_alpha_marked_infeasible() {
        let (model, prior, d0, dn) = setup(3, 300);
        let cfg = OptimConfig {
            alpha_hat_grid: vec![0.2, 0.5, 0.8],
            ..quick_cfg()
        };
        let res = alpha_hat_grid_search(&prior, &model, &d0, &dn, &cfg, 5).unwrap();
        assert!(res.best.is_none());
        assert!(res.runs.iter().all(|r| !r.feasible));
    }

    #[test]
    fn single_cell_grid_uses_full_delta() {
        let (model, prior, d0, dn) = setup(4, 300);
        let cfg = OptimConfig {
            alpha_hat_grid: vec![0.05],
            ..quick_cfg()
        };
        let res = alpha_hat_grid_search(&prior, &model, &d0, &dn, &cfg, 6).unwrap();
        assert_eq!(res.delta_per_run, cfg.delta);
    }
}
