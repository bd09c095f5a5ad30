//! Aggregation of run rows into a summary: mean ± std coverage and
//! efficiency per cell, coverage-violation flags against the binomial
//! confidence band, and set sizes relative to standard ICP under both
//! aggregation orders (per-seed ratios averaged, and ratio of pooled means).

use crate::runner::RunRow;
use anyhow::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub task: String,
    pub method: String,
    pub n_cal: usize,
    pub data_split: f64,
    pub n_runs: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub efficiency_mean: f64,
    pub efficiency_std: f64,
    /// Number of seeds whose empirical coverage fell below the lower edge of
    /// the 95% binomial interval around 1 − α at the test size.
    pub coverage_violations: usize,
    /// Mean over seeds of (efficiency / matching standard-run efficiency).
    pub rel_eff_mean_of_ratios: Option<f64>,
    /// Pooled-mean efficiency divided by the standard cell's pooled mean.
    pub rel_eff_ratio_of_means: Option<f64>,
}

pub const SUMMARY_CSV_COLUMNS: &[&str] = &[
    "task",
    "method",
    "n_cal",
    "data_split",
    "n_runs",
    "coverage_mean",
    "coverage_std",
    "efficiency_mean",
    "efficiency_std",
    "coverage_violations",
    "rel_eff_mean_of_ratios",
    "rel_eff_ratio_of_means",
];

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Lower edge of the 95% confidence interval for an empirical mean of
/// n Bernoulli(1−α) draws.
pub fn coverage_ci_lower(alpha: f64, n_test: usize) -> f64 {
    let p = 1.0 - alpha;
    p - 1.96 * (p * (1.0 - p) / n_test as f64).sqrt()
}

/// Group rows by (task, method, n_cal, split) and aggregate. Relative
/// efficiencies are against the standard method in the matching
/// (task, n_cal, split) cell, when present.
pub fn summarize(rows: &[RunRow]) -> Vec<SummaryCell> {
    // BTreeMap keyed by a display-stable tuple keeps output deterministic.
    type Key = (String, String, usize, String);
    let split_key = |s: f64| format!("{s:.6}");
    let mut groups: BTreeMap<Key, Vec<&RunRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((
                row.task.clone(),
                row.method.clone(),
                row.n_cal,
                split_key(row.data_split),
            ))
            .or_default()
            .push(row);
    }

    // Standard-per-seed lookup for the ratio aggregations.
    let mut standard_by_seed: BTreeMap<(String, usize, String, u64), f64> = BTreeMap::new();
    let mut standard_pooled: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.method == "standard") {
        let Some(eff) = row.mean_efficiency else { continue };
        standard_by_seed.insert(
            (
                row.task.clone(),
                row.n_cal,
                split_key(row.data_split),
                row.seed,
            ),
            eff,
        );
        standard_pooled
            .entry((row.task.clone(), row.n_cal, split_key(row.data_split)))
            .or_default()
            .push(eff);
    }

    let mut cells = Vec::with_capacity(groups.len());
    for ((task, method, n_cal, split), all_rows) in groups {
        // Infeasible rows carry no metrics; aggregate over evaluated runs.
        let group: Vec<&RunRow> = all_rows
            .into_iter()
            .filter(|r| r.coverage.is_some())
            .collect();
        if group.is_empty() {
            continue;
        }
        let coverages: Vec<f64> = group.iter().map(|r| r.coverage.unwrap()).collect();
        let effs: Vec<f64> = group.iter().map(|r| r.mean_efficiency.unwrap()).collect();
        let (cov_mean, cov_std) = mean_std(&coverages);
        let (eff_mean, eff_std) = mean_std(&effs);
        let violations = group
            .iter()
            .filter(|r| r.coverage.unwrap() < coverage_ci_lower(r.alpha, r.n_test))
            .count();

        let ratios: Vec<f64> = group
            .iter()
            .filter_map(|r| {
                standard_by_seed
                    .get(&(task.clone(), n_cal, split.clone(), r.seed))
                    .map(|std_eff| r.mean_efficiency.unwrap() / std_eff)
            })
            .collect();
        let rel_mean_of_ratios = (!ratios.is_empty()).then(|| mean_std(&ratios).0);
        let rel_ratio_of_means = standard_pooled
            .get(&(task.clone(), n_cal, split.clone()))
            .map(|stds| eff_mean / (stds.iter().sum::<f64>() / stds.len() as f64));

        cells.push(SummaryCell {
            task,
            method,
            n_cal,
            data_split: split.parse().expect("formatted split"),
            n_runs: group.len(),
            coverage_mean: cov_mean,
            coverage_std: cov_std,
            efficiency_mean: eff_mean,
            efficiency_std: eff_std,
            coverage_violations: violations,
            rel_eff_mean_of_ratios: rel_mean_of_ratios,
            rel_eff_ratio_of_means: rel_ratio_of_means,
        });
    }
    cells
}

pub fn write_summary(cells: &[SummaryCell], csv_path: &Path, json_path: &Path) -> Result<()> {
    if let Some(parent) = csv_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(SUMMARY_CSV_COLUMNS)?;
    for c in cells {
        w.write_record([
            c.task.clone(),
            c.method.clone(),
            c.n_cal.to_string(),
            c.data_split.to_string(),
            c.n_runs.to_string(),
            c.coverage_mean.to_string(),
            c.coverage_std.to_string(),
            c.efficiency_mean.to_string(),
            c.efficiency_std.to_string(),
            c.coverage_violations.to_string(),
            fmt(&c.rel_eff_mean_of_ratios),
            fmt(&c.rel_eff_ratio_of_means),
        ])?;
    }
    w.flush()?;
    std::fs::write(json_path, serde_json::to_string_pretty(cells)?)?;
    Ok(())
}

/// Read rows back from a results CSV.
pub fn read_results_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let opt = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(RunRow {
            config_hash: r[0].to_string(),
            task: r[1].to_string(),
            method: r[2].to_string(),
            n_cal: r[3].parse()?,
            data_split: r[4].parse()?,
            seed: r[5].parse()?,
            alpha: r[6].parse()?,
            delta: r[7].parse()?,
            alpha_hat: opt(&r[8]),
            n_test: r[9].parse()?,
            coverage: opt(&r[10]),
            mean_efficiency: opt(&r[11]),
            kl_qp: r[12].parse()?,
            kl_budget: opt(&r[13]),
            coverage_cert: opt(&r[14]),
            efficiency_cert: opt(&r[15]),
            feasible: r[16].parse()?,
            status: r[17].to_string(),
            wall_s: r[18].parse()?,
        });
    }
    Ok(rows)
}
