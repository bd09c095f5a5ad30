//! Command-line front end: run experiments, sweep grids, tabulate KL
//! budgets, aggregate reports, and recompute certificates from saved
//! predictors.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pbconf_cli::budget::{budget_table, write_budget_csv};
use pbconf_cli::config::{resolve_output_dir, MethodKind, RunConfig, SweepConfig};
use pbconf_cli::report::{read_results_csv, summarize, write_summary};
use pbconf_cli::runner::{run_jobs, write_results_csv};
use pbconf_core::bounds::{coverage_upper_bound, efficiency_upper_bound, BoundInputs};
use pbconf_core::conformal::PredictorFile;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "pbconf",
    about = "Conformal prediction with PAC-Bayes generalization certificates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides the config and $PBCONF_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the job queue.
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment cell over its seeds.
    Run {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Override the method from the config file.
        #[arg(long)]
        method: Option<String>,
        /// Override the calibration set size.
        #[arg(long)]
        n_cal: Option<usize>,
        /// Override the data split ratio.
        #[arg(long)]
        data_split: Option<f64>,
        /// Override the seed list (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run a sweep grid (methods × sizes × splits × seeds).
    Sweep {
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Emit the KL-budget table with calibration-correction boundaries.
    Budget {
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Calibration sizes (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        n: Vec<usize>,
        /// Empirical-rate grid as start:stop:count.
        #[arg(long, default_value = "0.005:0.1:40")]
        alpha_hat: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a results CSV into summary CSV + JSON.
    Report {
        /// Path to results.csv from run/sweep.
        #[arg(long)]
        results: PathBuf,
        /// Output prefix; writes <prefix>.csv and <prefix>.json.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Recompute coverage and efficiency certificates from a saved predictor.
    Certify {
        /// Predictor JSON written by run/sweep.
        #[arg(long)]
        predictor: PathBuf,
    },
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    anyhow::ensure!(
        parts.len() == 3,
        "alpha_hat grid must be start:stop:count, got {spec}"
    );
    let start: f64 = parts[0].parse().context("grid start")?;
    let stop: f64 = parts[1].parse().context("grid stop")?;
    let count: usize = parts[2].parse().context("grid count")?;
    anyhow::ensure!(count >= 2 && stop > start, "degenerate grid {spec}");
    Ok((0..count)
        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
        .collect())
}

fn parse_method(name: &str) -> Result<MethodKind> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .with_context(|| format!("unknown method {name}"))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            common,
            method,
            n_cal,
            data_split,
            seeds,
        } => {
            let mut cfg = RunConfig::load(&common.config)?;
            if let Some(m) = method {
                cfg.method = parse_method(&m)?;
            }
            if let Some(n) = n_cal {
                cfg.n_cal = n;
            }
            if let Some(s) = data_split {
                cfg.data_split = s;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            cfg.validate()?;
            let out = resolve_output_dir(common.out.as_deref(), cfg.output_dir.as_deref());
            let rows = run_jobs(std::slice::from_ref(&cfg), &out, common.workers)?;
            let csv_path = out.join("results.csv");
            write_results_csv(&rows, &csv_path)?;
            let manifest = out.join("manifest.json");
            std::fs::write(
                &manifest,
                serde_json::to_string_pretty(&serde_json::json!({
                    "config": cfg,
                    "rows": rows,
                }))?,
            )?;
            println!("wrote {} rows to {}", rows.len(), csv_path.display());
            Ok(())
        }
        Command::Sweep { common } => {
            let cfg = SweepConfig::load(&common.config)?;
            let out = resolve_output_dir(common.out.as_deref(), cfg.output_dir.as_deref());
            let cells = cfg.cells();
            let rows = run_jobs(&cells, &out, common.workers)?;
            let csv_path = out.join("results.csv");
            write_results_csv(&rows, &csv_path)?;
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "config": cfg,
                    "rows": rows,
                }))?,
            )?;
            println!("wrote {} rows to {}", rows.len(), csv_path.display());
            Ok(())
        }
        Command::Budget {
            alpha,
            delta,
            n,
            alpha_hat,
            out,
        } => {
            let grid = parse_grid(&alpha_hat)?;
            let rows = budget_table(alpha, delta, &n, &grid);
            let path = out.unwrap_or_else(|| {
                resolve_output_dir(None, None).join("budget.csv")
            });
            write_budget_csv(&rows, &path)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
            Ok(())
        }
        Command::Report {
            results,
            out_prefix,
        } => {
            let rows = read_results_csv(&results)?;
            let cells = summarize(&rows);
            let csv_path = out_prefix.with_extension("csv");
            let json_path = out_prefix.with_extension("json");
            write_summary(&cells, &csv_path, &json_path)?;
            println!(
                "summarized {} rows into {} cells at {}",
                rows.len(),
                cells.len(),
                csv_path.display()
            );
            Ok(())
        }
        Command::Certify { predictor } => {
            let file = PredictorFile::load(&predictor)
                .map_err(|e| anyhow::anyhow!("loading predictor: {e}"))?;
            let inputs = file.certificate_inputs.ok_or_else(|| {
                anyhow::anyhow!("predictor file carries no certificate inputs")
            })?;
            let cov = coverage_upper_bound(&BoundInputs {
                alpha: inputs.alpha,
                alpha_hat: file.predictor.alpha_hat,
                delta: inputs.delta,
                n: inputs.n_cal,
                kl_qp: inputs.kl_qp,
            });
            let eff = efficiency_upper_bound(
                inputs.empirical_eff,
                inputs.kl_qp,
                inputs.beta_bound,
                inputs.l_tau,
                inputs.n_cal,
                inputs.gamma,
            );
            let report = serde_json::json!({
                "pairs": file.predictor.n_pairs(),
                "alpha_hat": file.predictor.alpha_hat,
                "inputs": inputs,
                "coverage_certificate": cov.ok(),
                "efficiency_certificate": eff,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
