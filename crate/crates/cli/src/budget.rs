//! The KL-budget table: budget as a function of (N, α̂) with the calibration
//! correction boundaries marked per N.

use anyhow::Result;
use pbconf_core::bounds::{
    budget_boundary_alpha_hat, kl_budget, vovk_2a_alpha_hat, vovk_2b_alpha_hat,
};
use std::path::Path;

pub const BUDGET_CSV_COLUMNS: &[&str] = &[
    "n",
    "alpha_hat",
    "kl_budget",
    "budget_zero_cross",
    "vovk_2a",
    "vovk_2b",
];

#[derive(Debug, Clone)]
pub struct BudgetRow {
    pub n: usize,
    pub alpha_hat: f64,
    pub kl_budget: Option<f64>,
    pub budget_zero_cross: Option<f64>,
    pub vovk_2a: Option<f64>,
    pub vovk_2b: Option<f64>,
}

/// One row per (N, α̂); the boundary columns repeat per N.
pub fn budget_table(
    alpha: f64,
    delta: f64,
    n_list: &[usize],
    alpha_hat_grid: &[f64],
) -> Vec<BudgetRow> {
    let mut rows = Vec::with_capacity(n_list.len() * alpha_hat_grid.len());
    for &n in n_list {
        let cross = budget_boundary_alpha_hat(alpha, delta, n);
        let a2 = vovk_2a_alpha_hat(alpha, delta, n).ok();
        let b2 = vovk_2b_alpha_hat(alpha, delta, n).ok();
        for &alpha_hat in alpha_hat_grid {
            let budget = if alpha_hat <= alpha {
                kl_budget(alpha, alpha_hat, delta, n).ok()
            } else {
                None
            };
            rows.push(BudgetRow {
                n,
                alpha_hat,
                kl_budget: budget,
                budget_zero_cross: cross,
                vovk_2a: a2,
                vovk_2b: b2,
            });
        }
    }
    rows
}

pub fn write_budget_csv(rows: &[BudgetRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BUDGET_CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.alpha_hat.to_string(),
            fmt(&r.kl_budget),
            fmt(&r.budget_zero_cross),
            fmt(&r.vovk_2a),
            fmt(&r.vovk_2b),
        ])?;
    }
    w.flush()?;
    Ok(())
}
