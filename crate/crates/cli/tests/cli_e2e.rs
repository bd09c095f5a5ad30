//! End-to-end harness checks on tiny configurations: determinism of results
//! CSV bytes, resume behavior, budget-table shape, report aggregation, and
//! certificate recomputation from a saved predictor.

use pbconf_cli::budget::budget_table;
use pbconf_cli::config::{MethodKind, RunConfig, SweepConfig, TaskKind, TaskOptions};
use pbconf_cli::report::{read_results_csv, summarize};
use pbconf_cli::runner::{run_jobs, write_results_csv, RUN_CSV_COLUMNS};
use pbconf_core::bounds::{coverage_upper_bound, efficiency_upper_bound, BoundInputs};
use pbconf_core::conformal::PredictorFile;
use pbconf_core::optim::OptimConfig;
use std::path::{Path, PathBuf};

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pbconf_e2e_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_regression_cfg(method: MethodKind) -> RunConfig {
    RunConfig {
        task: TaskKind::Regression,
        method,
        n_cal: 400,
        data_split: 0.5,
        alpha: 0.1,
        delta: 0.05,
        seeds: vec![0, 1],
        n_test: 400,
        optim: OptimConfig {
            inner_steps: 40,
            outer_iterations: 2,
            theta_samples: 2,
            eval_theta_samples: 2,
            eval_pairs: 3,
            minibatch: 32,
            optimizer: pbconf_core::optim::OptimKind::Adam,
            learning_rate: 0.01,
            alpha_hat_grid: vec![0.02, 0.04],
            ..OptimConfig::default_regression()
        },
        task_options: TaskOptions {
            n_train: Some(60),
            base_steps: Some(200),
            base_lr: Some(0.02),
            ..TaskOptions::default()
        },
        output_dir: None,
    }
}

fn csv_without_wall_clock(path: &Path) -> String {
    let raw = std::fs::read_to_string(path).unwrap();
    raw.lines()
        .map(|line| {
            let cut = line.rfind(',').unwrap();
            &line[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn identical_configs_produce_identical_csv_modulo_wall_clock() {
    let cfg = tiny_regression_cfg(MethodKind::Standard);
    let out_a = tmp_dir("det_a");
    let out_b = tmp_dir("det_b");
    let rows_a = run_jobs(std::slice::from_ref(&cfg), &out_a, 2).unwrap();
    let rows_b = run_jobs(std::slice::from_ref(&cfg), &out_b, 2).unwrap();
    write_results_csv(&rows_a, &out_a.join("results.csv")).unwrap();
    write_results_csv(&rows_b, &out_b.join("results.csv")).unwrap();
    assert_eq!(
        csv_without_wall_clock(&out_a.join("results.csv")),
        csv_without_wall_clock(&out_b.join("results.csv"))
    );
    // The wall-clock column is the only varying field, and it is last.
    assert_eq!(RUN_CSV_COLUMNS.last(), Some(&"wall_s"));
}

#[test]
fn interrupted_sweep_resumes_from_result_files() {
    let cfg = tiny_regression_cfg(MethodKind::Standard);
    let out = tmp_dir("resume");
    let first = run_jobs(std::slice::from_ref(&cfg), &out, 1).unwrap();
    // Second invocation must reuse the stored rows bit-for-bit, including
    // wall clocks, proving it did not re-run.
    let second = run_jobs(std::slice::from_ref(&cfg), &out, 1).unwrap();
    assert_eq!(first, second);
}

#[test]
fn pacbayes_pipeline_runs_and_satisfies_constraint() {
    let cfg = tiny_regression_cfg(MethodKind::Pacbayes);
    let out = tmp_dir("pb");
    let rows = run_jobs(std::slice::from_ref(&cfg), &out, 2).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let coverage = row.coverage.expect("evaluated run");
        assert!(coverage > 0.5, "coverage collapsed: {coverage}");
        if row.feasible {
            let budget = row.kl_budget.expect("feasible run has budget");
            assert!(
                row.kl_qp <= budget + 1e-6,
                "KL {} above budget {budget}",
                row.kl_qp
            );
        }
    }
}

#[test]
fn saved_predictor_certificates_recompute() {
    let cfg = tiny_regression_cfg(MethodKind::Learned2a);
    let out = tmp_dir("cert");
    let rows = run_jobs(std::slice::from_ref(&cfg), &out, 1).unwrap();
    let row = &rows[0];

    let pred_path = out
        .join("predictors")
        .join(format!("{}-{}-s{}.json", row.config_hash, row.method, row.seed));
    let file = PredictorFile::load(&pred_path).unwrap();
    let inputs = file.certificate_inputs.unwrap();

    let cov = coverage_upper_bound(&BoundInputs {
        alpha: inputs.alpha,
        alpha_hat: file.predictor.alpha_hat,
        delta: inputs.delta,
        n: inputs.n_cal,
        kl_qp: inputs.kl_qp,
    })
    .unwrap();
    assert_eq!(Some(cov.upper_bound), row.coverage_cert);

    let eff = efficiency_upper_bound(
        inputs.empirical_eff,
        inputs.kl_qp,
        inputs.beta_bound,
        inputs.l_tau,
        inputs.n_cal,
        inputs.gamma,
    );
    assert_eq!(Some(eff.upper_bound), row.efficiency_cert);
}

#[test]
fn results_csv_round_trips_and_summarizes() {
    let cfg = tiny_regression_cfg(MethodKind::Standard);
    let out = tmp_dir("report");
    let rows = run_jobs(std::slice::from_ref(&cfg), &out, 2).unwrap();
    let csv_path = out.join("results.csv");
    write_results_csv(&rows, &csv_path).unwrap();
    let back = read_results_csv(&csv_path).unwrap();
    assert_eq!(rows, back);

    let cells = summarize(&back);
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].n_runs, 2);
    let mean = (rows[0].coverage.unwrap() + rows[1].coverage.unwrap()) / 2.0;
    assert!((cells[0].coverage_mean - mean).abs() < 1e-12);
}

/// An unattainable guarantee (Hoeffding correction at tiny N) produces an
/// infeasible row instead of failing the sweep.
#[test]
fn infeasible_guarantee_reported_per_row() {
    let mut cfg = tiny_regression_cfg(MethodKind::Standard);
    cfg.n_cal = 50;
    cfg.seeds = vec![0];
    let ok_cfg = tiny_regression_cfg(MethodKind::Standard);
    let out = tmp_dir("infeasible");
    let rows = run_jobs(&[cfg, ok_cfg], &out, 1).unwrap();
    assert_eq!(rows.len(), 3);
    let bad: Vec<_> = rows.iter().filter(|r| r.n_cal == 50).collect();
    assert_eq!(bad.len(), 1);
    assert!(!bad[0].feasible);
    assert!(bad[0].coverage.is_none());
    assert!(bad[0].status.contains("too small"), "status: {}", bad[0].status);
    assert!(rows.iter().filter(|r| r.n_cal == 400).all(|r| r.feasible));
}

/// The standard regression method's intervals have input-independent width.
#[test]
fn standard_regression_width_is_constant() {
    let mut cfg = tiny_regression_cfg(MethodKind::Standard);
    cfg.seeds = vec![0];
    let out = tmp_dir("constwidth");
    let rows = run_jobs(std::slice::from_ref(&cfg), &out, 1).unwrap();
    let row = &rows[0];
    let pred_path = out
        .join("predictors")
        .join(format!("{}-{}-s{}.json", row.config_hash, row.method, row.seed));
    let file = PredictorFile::load(&pred_path).unwrap();
    let (theta, tau) = &file.predictor.samples[0];
    let model = &file.predictor.model;
    let w = |x: f64| {
        pbconf_core::conformal::predict_set(model, theta, &[x], *tau).efficiency()
    };
    assert!((w(-0.9) - w(0.7)).abs() < 1e-9, "{} vs {}", w(-0.9), w(0.7));
}

/// Training curves are emitted per grid cell when requested.
#[test]
fn trace_csv_emitted_when_recording() {
    let mut cfg = tiny_regression_cfg(MethodKind::Pacbayes);
    cfg.seeds = vec![0];
    cfg.optim.record_trace = true;
    let out = tmp_dir("trace");
    let rows = run_jobs(std::slice::from_ref(&cfg), &out, 1).unwrap();
    assert_eq!(rows.len(), 1);
    let traces: Vec<_> = std::fs::read_dir(out.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert!(!traces.is_empty(), "no trace files written");
    let body = std::fs::read_to_string(&traces[0]).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("outer,step,loss,kl,lambda,rho"));
    assert!(lines.next().is_some(), "trace has no rows");
}

/// A sweep over split ratios yields the relative-set-size-vs-split layout:
/// one summary cell per (method, split) with efficiency relative to the
/// standard method of the matching cell.
#[test]
fn sweep_over_splits_gives_relative_efficiency_layout() {
    let proto = tiny_regression_cfg(MethodKind::Standard);
    let sweep = SweepConfig {
        task: TaskKind::Regression,
        methods: vec![MethodKind::Standard, MethodKind::Learned2a],
        n_cal: vec![400],
        data_splits: vec![0.25, 0.5],
        alpha: 0.1,
        delta: 0.05,
        seeds: vec![0],
        n_test: 300,
        optim: proto.optim.clone(),
        task_options: proto.task_options.clone(),
        output_dir: None,
    };
    let out = tmp_dir("sweep");
    let rows = run_jobs(&sweep.cells(), &out, 2).unwrap();
    assert_eq!(rows.len(), 4);
    let cells = summarize(&rows);
    assert_eq!(cells.len(), 4);
    for cell in cells.iter().filter(|c| c.method == "learned_2a") {
        assert!(cell.rel_eff_mean_of_ratios.is_some());
        assert!(cell.rel_eff_ratio_of_means.is_some());
    }
}

/// Real digit files in IDX format drive the classification pipeline end to
/// end (tiny hand-built fixtures; loose guarantee so everything stays
/// feasible at fixture scale).
#[test]
fn classification_runs_from_idx_files() {
    let dir = tmp_dir("idx");
    let (w, h, n_train, n_eval) = (6usize, 6usize, 60u32, 80u32);
    let write_pair = |prefix: &str, count: u32| -> (PathBuf, PathBuf) {
        let mut img = vec![];
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&count.to_be_bytes());
        img.extend_from_slice(&(h as u32).to_be_bytes());
        img.extend_from_slice(&(w as u32).to_be_bytes());
        let mut lbl = vec![];
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&count.to_be_bytes());
        for i in 0..count {
            let class = (i % 10) as u8;
            lbl.push(class);
            for p in 0..(w * h) {
                // Class-dependent diagonal stripe pattern.
                let on = (p + class as usize) % 7 < 2;
                img.push(if on { 220 } else { 10 });
            }
        }
        let ip = dir.join(format!("{prefix}-images.idx"));
        let lp = dir.join(format!("{prefix}-labels.idx"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    };
    let (ti, tl) = write_pair("train", n_train);
    let (ei, el) = write_pair("eval", n_eval);

    let cfg = RunConfig {
        task: TaskKind::Classification,
        method: MethodKind::Standard,
        n_cal: 40,
        data_split: 0.5,
        alpha: 0.5,
        delta: 0.5,
        seeds: vec![0],
        n_test: 20,
        optim: OptimConfig {
            inner_steps: 10,
            outer_iterations: 1,
            theta_samples: 1,
            eval_theta_samples: 1,
            eval_pairs: 1,
            minibatch: 16,
            ..OptimConfig::default_classification()
        },
        task_options: TaskOptions {
            n_train: Some(n_train as usize),
            base_steps: Some(30),
            base_lr: Some(1e-3),
            idx_train_images: Some(ti),
            idx_train_labels: Some(tl),
            idx_eval_images: Some(ei),
            idx_eval_labels: Some(el),
            ..TaskOptions::default()
        },
        output_dir: None,
    };
    let rows = run_jobs(std::slice::from_ref(&cfg), &dir.join("out"), 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].feasible, "status: {}", rows[0].status);
    let coverage = rows[0].coverage.unwrap();
    assert!(coverage > 0.3, "coverage {coverage} collapsed");
}

#[test]
fn budget_table_matches_figure_shape() {
    let grid: Vec<f64> = (1..=30).map(|i| 0.003 * i as f64).collect();
    let rows = budget_table(0.1, 0.05, &[1000, 10_000, 100_000], &grid);
    assert_eq!(rows.len(), 90);

    // Budget nonincreasing in alpha_hat within each n.
    for &n in &[1000usize, 10_000, 100_000] {
        let mut prev = f64::INFINITY;
        for r in rows.iter().filter(|r| r.n == n) {
            if let Some(b) = r.kl_budget {
                assert!(b <= prev + 1e-9);
                prev = b;
            }
        }
    }
    // Zero crossing within 0.01 of the Hoeffding correction, larger n
    // crossing at larger alpha_hat.
    let crossings: Vec<f64> = [1000usize, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let r = rows.iter().find(|r| r.n == n).unwrap();
            let cross = r.budget_zero_cross.unwrap();
            assert!((cross - r.vovk_2a.unwrap()).abs() < 0.01);
            cross
        })
        .collect();
    assert!(crossings[0] < crossings[1] && crossings[1] < crossings[2]);
}
