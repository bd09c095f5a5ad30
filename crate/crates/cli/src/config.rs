//! Experiment configuration: strict JSON with unknown keys rejected.
//!
//! A run file describes one experiment cell (task, method, sizes) over a
//! list of seeds; a sweep file carries lists for methods, calibration sizes,
//! and split ratios. Top-level `alpha`, `delta`, and `data_split` are the
//! single source of truth and are copied over the corresponding fields of
//! the nested `optim` section before use.

use anyhow::{bail, Context, Result};
use pbconf_core::optim::OptimConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Regression => write!(f, "regression"),
            TaskKind::Classification => write!(f, "classification"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "learned_2a")]
    Learned2a,
    #[serde(rename = "learned_2b")]
    Learned2b,
    #[serde(rename = "pacbayes")]
    Pacbayes,
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodKind::Standard => write!(f, "standard"),
            MethodKind::Learned2a => write!(f, "learned_2a"),
            MethodKind::Learned2b => write!(f, "learned_2b"),
            MethodKind::Pacbayes => write!(f, "pacbayes"),
        }
    }
}

/// Task-specific knobs; unset values fall back to task-appropriate defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TaskOptions {
    /// Base-model pretraining examples (100 regression, 7000 classification).
    pub n_train: Option<usize>,
    /// Side length of synthetic digit images (default 28).
    pub image_size: Option<usize>,
    /// Real digit files in IDX format; when set, they replace the synthetic
    /// generator (images for pretraining, labels alongside).
    pub idx_train_images: Option<PathBuf>,
    pub idx_train_labels: Option<PathBuf>,
    pub idx_eval_images: Option<PathBuf>,
    pub idx_eval_labels: Option<PathBuf>,
    /// Pretraining steps/learning rate (4000 @ 0.02 SGD for regression,
    /// 600 @ 1e-3 Adam for classification).
    pub base_steps: Option<usize>,
    pub base_lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub method: MethodKind,
    pub n_cal: usize,
    pub data_split: f64,
    pub alpha: f64,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub n_test: usize,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub task_options: TaskOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub task: TaskKind,
    pub methods: Vec<MethodKind>,
    pub n_cal: Vec<usize>,
    pub data_splits: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub n_test: usize,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub task_options: TaskOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.alpha, self.delta, self.data_split, &self.seeds)?;
        if self.n_cal == 0 || self.n_test == 0 {
            bail!("n_cal and n_test must be positive");
        }
        self.optim.validate().map_err(anyhow::Error::msg)?;
        Ok(())
    }

    /// The optimizer config with run-level fields folded in.
    pub fn effective_optim(&self) -> OptimConfig {
        OptimConfig {
            alpha: self.alpha,
            delta: self.delta,
            data_split: self.data_split,
            ..self.optim.clone()
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: SweepConfig = serde_json::from_str(&raw)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for &split in &self.data_splits {
            validate_common(self.alpha, self.delta, split, &self.seeds)?;
        }
        if self.methods.is_empty() || self.n_cal.is_empty() || self.data_splits.is_empty() {
            bail!("sweep lists must be nonempty");
        }
        if self.n_cal.contains(&0) || self.n_test == 0 {
            bail!("n_cal and n_test must be positive");
        }
        self.optim.validate().map_err(anyhow::Error::msg)?;
        Ok(())
    }

    /// Expand the grid into per-cell run configs.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &n_cal in &self.n_cal {
                for &data_split in &self.data_splits {
                    out.push(RunConfig {
                        task: self.task,
                        method,
                        n_cal,
                        data_split,
                        alpha: self.alpha,
                        delta: self.delta,
                        seeds: self.seeds.clone(),
                        n_test: self.n_test,
                        optim: self.optim.clone(),
                        task_options: self.task_options.clone(),
                        output_dir: self.output_dir.clone(),
                    });
                }
            }
        }
        out
    }
}

fn validate_common(alpha: f64, delta: f64, split: f64, seeds: &[u64]) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("alpha={alpha} outside (0,1)");
    }
    if !(delta > 0.0 && delta < 1.0) {
        bail!("delta={delta} outside (0,1)");
    }
    if !(0.0..1.0).contains(&split) {
        bail!("data_split={split} outside [0,1)");
    }
    if seeds.is_empty() {
        bail!("seeds list is empty");
    }
    Ok(())
}

/// Output root resolution: explicit flag, then config, then $PBCONF_OUT,
/// then ./pbconf-out.
pub fn resolve_output_dir(flag: Option<&Path>, cfg_dir: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = cfg_dir {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("PBCONF_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("pbconf-out")
}
