//! Experiment execution: data preparation, the three pipelines, metric and
//! certificate computation, and atomic per-run result files.

use crate::config::{MethodKind, RunConfig, TaskKind};
use anyhow::{anyhow, bail, Context, Result};
use pbconf_core::bounds::{coverage_upper_bound, efficiency_upper_bound, BoundInputs};
use pbconf_core::conformal::{
    evaluate, CalibratedPredictor, CertificateInputs, LabeledData, PredictorFile, ScoreModel,
};
use pbconf_core::diff::{Activation, DiagGaussian, MlpArch, ParamVector};
use pbconf_core::optim::{
    alpha_hat_grid_search, derive_seed, empirical_efficiency01, learned_baseline,
    standard_baseline, CalibrationBound, OptimConfig, OptimError,
};
use pbconf_core::tasks::{
    cache, classifier_arch, gen_regression, gen_synthetic_digits, load_idx,
    regression_base_arch, to_labeled, train_base_classifier, train_base_regressor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Everything recorded for one (method, n_cal, split, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub config_hash: String,
    pub task: String,
    pub method: String,
    pub n_cal: usize,
    pub data_split: f64,
    pub seed: u64,
    pub alpha: f64,
    pub delta: f64,
    /// Empirical rate actually used for the returned predictor's thresholds;
    /// empty when the guarantee was infeasible at this cell.
    pub alpha_hat: Option<f64>,
    pub n_test: usize,
    pub coverage: Option<f64>,
    pub mean_efficiency: Option<f64>,
    pub kl_qp: f64,
    /// KL budget of the selected grid cell (PAC-Bayes only).
    pub kl_budget: Option<f64>,
    /// Upper bound on expected miscoverage from inverting the coverage bound.
    pub coverage_cert: Option<f64>,
    /// Upper bound on expected [0,1] efficiency loss.
    pub efficiency_cert: Option<f64>,
    /// False when a PAC-Bayes run fell back to standard calibration or the
    /// requested guarantee was infeasible outright.
    pub feasible: bool,
    /// "ok", or the reason the guarantee was infeasible.
    pub status: String,
    pub wall_s: f64,
}

/// Column order for results CSV emission.
pub const RUN_CSV_COLUMNS: &[&str] = &[
    "config_hash",
    "task",
    "method",
    "n_cal",
    "data_split",
    "seed",
    "alpha",
    "delta",
    "alpha_hat",
    "n_test",
    "coverage",
    "mean_efficiency",
    "kl_qp",
    "kl_budget",
    "coverage_cert",
    "efficiency_cert",
    "feasible",
    "status",
    "wall_s",
];

impl RunRow {
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.config_hash.clone(),
            self.task.clone(),
            self.method.clone(),
            self.n_cal.to_string(),
            self.data_split.to_string(),
            self.seed.to_string(),
            self.alpha.to_string(),
            self.delta.to_string(),
            opt(&self.alpha_hat),
            self.n_test.to_string(),
            opt(&self.coverage),
            opt(&self.mean_efficiency),
            self.kl_qp.to_string(),
            opt(&self.kl_budget),
            opt(&self.coverage_cert),
            opt(&self.efficiency_cert),
            self.feasible.to_string(),
            self.status.clone(),
            self.wall_s.to_string(),
        ]
    }
}

/// Identity of one run cell, used for the config hash and result paths.
#[derive(Serialize)]
struct CellIdentity<'a> {
    task: &'a TaskKind,
    method: &'a MethodKind,
    n_cal: usize,
    data_split: f64,
    alpha: f64,
    delta: f64,
    n_test: usize,
    optim: &'a OptimConfig,
    task_options: &'a crate::config::TaskOptions,
}

pub fn cell_hash(cfg: &RunConfig) -> String {
    cache::config_hash(&CellIdentity {
        task: &cfg.task,
        method: &cfg.method,
        n_cal: cfg.n_cal,
        data_split: cfg.data_split,
        alpha: cfg.alpha,
        delta: cfg.delta,
        n_test: cfg.n_test,
        optim: &cfg.optim,
        task_options: &cfg.task_options,
    })
}

/// Prepared per-seed data: the score model, its data-independent initial θ,
/// calibration and test splits.
pub struct PreparedTask {
    pub model: ScoreModel,
    pub theta_init: ParamVector,
    pub cal: LabeledData,
    pub test: LabeledData,
}

fn regression_u_arch() -> MlpArch {
    MlpArch::new(1, vec![128, 128], 1, Activation::Tanh)
}

/// Pretraining is cached under out/cache keyed by everything that affects
/// the trained parameters.
fn cached_base_params<F>(
    cache_dir: &Path,
    key_material: &impl Serialize,
    train: F,
) -> Result<Vec<f64>>
where
    F: FnOnce() -> Vec<f64>,
{
    let key = cache::config_hash(key_material);
    let path = cache::params_cache_path(cache_dir, &key);
    if let Some(values) = cache::load_params(&path)? {
        return Ok(values);
    }
    let values = train();
    cache::save_params(&path, &values)?;
    Ok(values)
}

pub fn prepare_task(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<PreparedTask> {
    let cache_dir = out_dir.join("cache");
    match cfg.task {
        TaskKind::Regression => {
            let n_train = cfg.task_options.n_train.unwrap_or(100);
            let base_steps = cfg.task_options.base_steps.unwrap_or(4000);
            let base_lr = cfg.task_options.base_lr.unwrap_or(0.02);
            let task = gen_regression(n_train, cfg.n_cal, cfg.n_test, seed);
            let base_arch = regression_base_arch();
            let base_values = cached_base_params(
                &cache_dir,
                &("regression-base", n_train, base_steps, base_lr, seed),
                || train_base_regressor(&task, base_steps, base_lr, seed).into_values(),
            )?;
            let base_params =
                ParamVector::new(std::sync::Arc::new(base_arch.layout()), base_values);
            let model = ScoreModel::regression(base_arch, base_params, regression_u_arch());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1417));
            let theta_init = model.init_theta(&mut rng);
            Ok(PreparedTask {
                model,
                theta_init,
                cal: task.cal,
                test: task.test,
            })
        }
        TaskKind::Classification => {
            let n_train = cfg.task_options.n_train.unwrap_or(7000);
            let base_steps = cfg.task_options.base_steps.unwrap_or(600);
            let base_lr = cfg.task_options.base_lr.unwrap_or(1e-3);
            let size = cfg.task_options.image_size.unwrap_or(28);

            let (clean_train, corrupt_pool) = match (
                &cfg.task_options.idx_train_images,
                &cfg.task_options.idx_train_labels,
                &cfg.task_options.idx_eval_images,
                &cfg.task_options.idx_eval_labels,
            ) {
                (Some(ti), Some(tl), Some(ei), Some(el)) => {
                    let train = load_idx(ti, tl).context("loading train IDX pair")?;
                    let eval = load_idx(ei, el).context("loading eval IDX pair")?;
                    if train.len() < n_train {
                        bail!("train IDX has {} images, need {n_train}", train.len());
                    }
                    let train_subset = train.subset(&(0..n_train).collect::<Vec<_>>());
                    (train_subset, eval)
                }
                (None, None, None, None) => {
                    let pool =
                        gen_synthetic_digits(n_train + cfg.n_cal + cfg.n_test, size, seed);
                    let train = pool.subset(&(0..n_train).collect::<Vec<_>>());
                    let rest = pool.subset(&(n_train..pool.len()).collect::<Vec<_>>());
                    (train, rest)
                }
                _ => bail!("all four idx_* paths must be set together"),
            };

            if corrupt_pool.len() < cfg.n_cal + cfg.n_test {
                bail!(
                    "corruption pool has {} images, need {}",
                    corrupt_pool.len(),
                    cfg.n_cal + cfg.n_test
                );
            }

            // The corrupted pool is cached keyed by its content-defining
            // config, then split per seed.
            let pool_key = (
                "corrupted-pool",
                seed,
                corrupt_pool.len(),
                corrupt_pool.width,
                corrupt_pool.height,
                n_train,
            );
            let corrupted = {
                let path = cache::images_cache_path(&cache_dir, &cache::config_hash(&pool_key));
                match cache::load_images(&path)? {
                    Some(set) => set,
                    None => {
                        let set = pbconf_core::tasks::corrupt(&corrupt_pool, seed);
                        cache::save_images(&path, &set)?;
                        set
                    }
                }
            };

            // Per-seed reshuffle into disjoint calibration/test splits.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let mut indices: Vec<usize> = (0..corrupted.len()).collect();
            use rand::Rng as _;
            for i in (1..indices.len()).rev() {
                let j = rng.random_range(0..=i);
                indices.swap(i, j);
            }
            let cal = corrupted.subset(&indices[..cfg.n_cal]);
            let test = corrupted.subset(&indices[cfg.n_cal..cfg.n_cal + cfg.n_test]);

            let arch = classifier_arch(corrupted.width * corrupted.height);
            let arch_for_cache = arch.clone();
            let clean_for_train = clean_train;
            let base_values = cached_base_params(
                &cache_dir,
                &(
                    "classifier-base",
                    n_train,
                    base_steps,
                    base_lr,
                    seed,
                    corrupted.width,
                    corrupted.height,
                ),
                move || {
                    train_base_classifier(&clean_for_train, &arch_for_cache, base_steps, base_lr, seed)
                        .into_values()
                },
            )?;
            let base_params = ParamVector::new(std::sync::Arc::new(arch.layout()), base_values);
            let model = ScoreModel::classification(arch, base_params);
            let theta_init = model.base_params.clone();
            Ok(PreparedTask {
                model,
                theta_init,
                cal: to_labeled(&cal),
                test: to_labeled(&test),
            })
        }
    }
}

/// Build the prior for the PAC-Bayes pipeline: mean at the initial θ,
/// per-coordinate variance scale/√fan_in.
pub fn initial_prior(model: &ScoreModel, theta_init: &ParamVector, sigma_scale: f64) -> DiagGaussian {
    let log_sigma: Vec<f64> = model
        .theta_fan_ins()
        .iter()
        .map(|f| 0.5 * (sigma_scale / f.sqrt()).ln())
        .collect();
    DiagGaussian::new(theta_init.clone(), theta_init.with_values(log_sigma))
}

/// The outcome of one pipeline run before evaluation.
struct PipelineResult {
    predictor: CalibratedPredictor,
    alpha_hat: f64,
    kl_qp: f64,
    kl_budget: Option<f64>,
    delta_eff: f64,
    feasible: bool,
    /// Calibration data the thresholds were computed on.
    cal_used: LabeledData,
    /// Certificate pieces already fixed by the grid search (PAC-Bayes).
    grid_certificate: Option<(f64, f64, f64)>, // (eff01, beta, l_tau)
}

fn run_pipeline(
    cfg: &RunConfig,
    prepared: &PreparedTask,
    optim: &OptimConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<PipelineResult> {
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5417));
    match cfg.method {
        MethodKind::Standard => {
            let (pred, alpha_hat) = standard_baseline(
                &prepared.model,
                prepared.theta_init.clone(),
                &prepared.cal,
                optim,
                CalibrationBound::Vovk2a,
            )?;
            Ok(PipelineResult {
                predictor: pred,
                alpha_hat,
                kl_qp: 0.0,
                kl_budget: None,
                delta_eff: cfg.delta,
                feasible: true,
                cal_used: prepared.cal.clone(),
                grid_certificate: None,
            })
        }
        MethodKind::Learned2a | MethodKind::Learned2b => {
            let bound = if cfg.method == MethodKind::Learned2a {
                CalibrationBound::Vovk2a
            } else {
                CalibrationBound::Vovk2b
            };
            let (d0, dn) = prepared.cal.split(cfg.data_split, &mut split_rng);
            let (pred, alpha_hat) = learned_baseline(
                &prepared.model,
                prepared.theta_init.clone(),
                &d0,
                &dn,
                optim,
                bound,
                optim.inner_steps,
                derive_seed(seed, 0x7ea1),
            )?;
            Ok(PipelineResult {
                predictor: pred,
                alpha_hat,
                kl_qp: 0.0,
                kl_budget: None,
                delta_eff: cfg.delta,
                feasible: true,
                cal_used: dn,
                grid_certificate: None,
            })
        }
        MethodKind::Pacbayes => {
            let (d0, dn) = prepared.cal.split(cfg.data_split, &mut split_rng);
            let prior_init =
                initial_prior(&prepared.model, &prepared.theta_init, optim.prior_sigma_scale);
            let grid = alpha_hat_grid_search(
                &prior_init,
                &prepared.model,
                &d0,
                &dn,
                optim,
                derive_seed(seed, 0x9c1d),
            )?;
            if optim.record_trace {
                write_traces(cfg, seed, &grid, out_dir)?;
            }
            match grid.best {
                Some(i) => {
                    let run = &grid.runs[i];
                    Ok(PipelineResult {
                        predictor: run.predictor.clone().expect("best run has predictor"),
                        alpha_hat: run.alpha_hat,
                        kl_qp: run.kl_qp,
                        kl_budget: Some(run.budget),
                        delta_eff: run.delta_run,
                        feasible: true,
                        cal_used: dn,
                        grid_certificate: Some((
                            run.empirical_eff,
                            run.beta_used,
                            run.l_tau_used,
                        )),
                    })
                }
                None => {
                    // Every grid cell infeasible: report standard ICP run on
                    // the full calibration set instead, flagged infeasible.
                    let (pred, alpha_hat) = standard_baseline(
                        &prepared.model,
                        prepared.theta_init.clone(),
                        &prepared.cal,
                        optim,
                        CalibrationBound::Vovk2a,
                    )?;
                    Ok(PipelineResult {
                        predictor: pred,
                        alpha_hat,
                        kl_qp: 0.0,
                        kl_budget: grid
                            .runs
                            .iter()
                            .map(|r| r.budget)
                            .filter(|b| b.is_finite())
                            .fold(None, |acc: Option<f64>, b| {
                                Some(acc.map_or(b, |a| a.max(b)))
                            }),
                        delta_eff: cfg.delta,
                        feasible: false,
                        cal_used: prepared.cal.clone(),
                        grid_certificate: None,
                    })
                }
            }
        }
    }
}

/// Execute one seed of the configured experiment, write the predictor file,
/// and return the result row.
pub fn run_single(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<RunRow> {
    let start = Instant::now();
    let optim = cfg.effective_optim();
    let prepared = prepare_task(cfg, seed, out_dir)?;

    let pipeline = run_pipeline(cfg, &prepared, &optim, seed, out_dir)?;

    let metrics = evaluate(
        &pipeline.predictor,
        &prepared.test,
        derive_seed(seed, 0xe7a1),
    );

    let n_used = pipeline.cal_used.len();
    let (eff01, beta, l_tau) = match pipeline.grid_certificate {
        Some(fixed) => fixed,
        None => {
            let (eff01, beta_default, l_tau_default) =
                empirical_efficiency01(&pipeline.predictor, &pipeline.cal_used, &optim);
            (
                eff01,
                optim.beta_bound.unwrap_or(beta_default),
                optim.l_tau.unwrap_or(l_tau_default),
            )
        }
    };

    let cov_cert = coverage_upper_bound(&BoundInputs {
        alpha: cfg.alpha,
        alpha_hat: pipeline.alpha_hat,
        delta: pipeline.delta_eff,
        n: n_used,
        kl_qp: pipeline.kl_qp,
    })
    .ok()
    .map(|c| c.upper_bound);
    let eff_cert = (n_used >= 2).then(|| {
        efficiency_upper_bound(eff01, pipeline.kl_qp, beta, l_tau, n_used, pipeline.delta_eff)
            .upper_bound
    });

    let row = RunRow {
        config_hash: cell_hash(cfg),
        task: cfg.task.to_string(),
        method: cfg.method.to_string(),
        n_cal: cfg.n_cal,
        data_split: cfg.data_split,
        seed,
        alpha: cfg.alpha,
        delta: cfg.delta,
        alpha_hat: Some(pipeline.alpha_hat),
        n_test: cfg.n_test,
        coverage: Some(metrics.coverage_rate),
        mean_efficiency: Some(metrics.mean_efficiency),
        kl_qp: pipeline.kl_qp,
        kl_budget: pipeline.kl_budget,
        coverage_cert: cov_cert,
        efficiency_cert: eff_cert,
        feasible: pipeline.feasible,
        status: if pipeline.feasible {
            "ok".to_string()
        } else {
            "no feasible grid cell; fell back to standard".to_string()
        },
        wall_s: start.elapsed().as_secs_f64(),
    };

    // Persist the predictor with its certificate inputs for `certify`.
    let pred_dir = out_dir.join("predictors");
    std::fs::create_dir_all(&pred_dir)?;
    let pred_path = pred_dir.join(format!(
        "{}-{}-s{}.json",
        row.config_hash, row.method, seed
    ));
    PredictorFile::new(
        pipeline.predictor,
        Some(CertificateInputs {
            alpha: cfg.alpha,
            delta: pipeline.delta_eff,
            n_cal: n_used,
            kl_qp: pipeline.kl_qp,
            empirical_eff: eff01,
            beta_bound: beta,
            l_tau,
            gamma: pipeline.delta_eff,
        }),
    )
    .save(&pred_path)
    .map_err(|e| anyhow!("saving predictor: {e}"))?;

    Ok(row)
}

fn result_path(out_dir: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    out_dir
        .join("results")
        .join(format!("{}-s{}.json", cell_hash(cfg), seed))
}

/// Per-step optimization curves (step, loss, KL, λ, ρ) for each grid cell.
fn write_traces(
    cfg: &RunConfig,
    seed: u64,
    grid: &pbconf_core::optim::GridSearchResult,
    out_dir: &Path,
) -> Result<()> {
    let dir = out_dir.join("traces");
    std::fs::create_dir_all(&dir)?;
    for run in &grid.runs {
        let Some(outcome) = &run.outcome else { continue };
        let path = dir.join(format!(
            "{}-s{}-ahat{}.csv",
            cell_hash(cfg),
            seed,
            run.alpha_hat
        ));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["outer", "step", "loss", "kl", "lambda", "rho"])?;
        for t in &outcome.trace {
            w.write_record([
                t.outer.to_string(),
                t.step.to_string(),
                t.loss.to_string(),
                t.kl.to_string(),
                t.lambda.to_string(),
                t.rho.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Row recording an infeasible guarantee at this cell.
fn infeasible_row(cfg: &RunConfig, seed: u64, status: String) -> RunRow {
    RunRow {
        config_hash: cell_hash(cfg),
        task: cfg.task.to_string(),
        method: cfg.method.to_string(),
        n_cal: cfg.n_cal,
        data_split: cfg.data_split,
        seed,
        alpha: cfg.alpha,
        delta: cfg.delta,
        alpha_hat: None,
        n_test: cfg.n_test,
        coverage: None,
        mean_efficiency: None,
        kl_qp: 0.0,
        kl_budget: None,
        coverage_cert: None,
        efficiency_cert: None,
        feasible: false,
        status,
        wall_s: 0.0,
    }
}

/// Deterministic row order for CSV output.
pub fn sort_rows(rows: &mut [RunRow]) {
    rows.sort_by(|a, b| {
        (&a.task, &a.method, a.n_cal)
            .cmp(&(&b.task, &b.method, b.n_cal))
            .then(a.data_split.total_cmp(&b.data_split))
            .then(a.seed.cmp(&b.seed))
            .then(a.config_hash.cmp(&b.config_hash))
    });
}

/// Run a list of cells as an independent job queue over (cell, seed) pairs.
/// Completed jobs are skipped on resume; each result is written atomically.
pub fn run_jobs(cells: &[RunConfig], out_dir: &Path, workers: usize) -> Result<Vec<RunRow>> {
    use rayon::prelude::*;
    let results_dir = out_dir.join("results");
    std::fs::create_dir_all(&results_dir)?;

    let mut jobs: Vec<(&RunConfig, u64)> = Vec::new();
    for cell in cells {
        for &seed in &cell.seeds {
            jobs.push((cell, seed));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")?;
    let rows: Vec<Result<RunRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|(cell, seed)| {
                let path = result_path(out_dir, cell, *seed);
                if let Ok(raw) = std::fs::read_to_string(&path) {
                    if let Ok(row) = serde_json::from_str::<RunRow>(&raw) {
                        return Ok(row);
                    }
                }
                let row = match run_single(cell, *seed, out_dir) {
                    Ok(row) => row,
                    Err(err) => match err.downcast_ref::<OptimError>() {
                        // An unattainable guarantee is a result, not a
                        // failure of the sweep.
                        Some(OptimError::Bound(_)) | Some(OptimError::DataTooSmall(_)) => {
                            infeasible_row(cell, *seed, err.to_string())
                        }
                        _ => return Err(err),
                    },
                };
                let tmp = path.with_extension(format!(
                    "tmp-{}-{}",
                    std::process::id(),
                    seed
                ));
                std::fs::write(&tmp, serde_json::to_string_pretty(&row)?)?;
                std::fs::rename(&tmp, &path)?;
                Ok(row)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        out.push(r?);
    }
    sort_rows(&mut out);
    Ok(out)
}

/// Write the aggregate results CSV.
pub fn write_results_csv(rows: &[RunRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(RUN_CSV_COLUMNS)?;
        for row in rows {
            w.write_record(row.csv_record())?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
