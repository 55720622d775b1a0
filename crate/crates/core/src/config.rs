//! Experiment configuration: a flat key = value file (TOML syntax, no
//! sections) with typed validation. Command-line `--set key=value` pairs
//! override file values; defaults fill the rest. The seed and the data
//! source are required, everything else has documented defaults.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every random draw in a run derives from it.
    pub seed: u64,
    pub data_source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,

    // Synthetic data source.
    #[serde(default = "d_synthetic_windows")]
    pub synthetic_windows: usize,
    #[serde(default = "d_synthetic_features")]
    pub synthetic_features: usize,
    #[serde(default = "d_synthetic_noise_sd")]
    pub synthetic_noise_sd: f64,
    /// Thin the regular timestamp grid to exercise irregular lags.
    #[serde(default)]
    pub synthetic_irregular: bool,
    /// Inherent missingness applied to the source data before windowing.
    #[serde(default)]
    pub missing_ratio: f64,

    // Windowing.
    #[serde(default = "d_window_length")]
    pub window_length: usize,
    #[serde(default = "d_window_length")]
    pub stride: usize,

    // Architecture.
    #[serde(default = "d_hidden")]
    pub hidden_size: usize,
    #[serde(default = "d_hidden")]
    pub disc_hidden_size: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_true")]
    pub use_attention: bool,
    #[serde(default = "d_true")]
    pub bidirectional: bool,

    // Loss weights.
    #[serde(default = "d_lambda_r")]
    pub lambda_r: f64,
    #[serde(default = "d_lambda_c")]
    pub lambda_c: f64,

    // Optimization.
    #[serde(default = "d_lr_generator")]
    pub lr_generator: f64,
    #[serde(default = "d_lr_discriminator")]
    pub lr_discriminator: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "d_adversarial_epochs")]
    pub adversarial_epochs: usize,
    #[serde(default = "d_hint_ratio")]
    pub hint_ratio: f64,
    /// Global gradient-norm cap per player; 0 disables.
    #[serde(default = "d_grad_clip")]
    pub grad_clip: f64,
    /// Optional hard clamp on discriminator weights after each update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc_weight_clip: Option<f64>,
    #[serde(default = "d_checkpoint_every")]
    pub checkpoint_every: usize,

    // Direct evaluation.
    #[serde(default = "d_holdout_ratio")]
    pub holdout_ratio: f64,
    #[serde(default = "d_knn_k")]
    pub knn_k: usize,
    #[serde(default = "d_eval_ratios")]
    pub eval_ratios: Vec<f64>,

    // Inference-time noise search.
    #[serde(default = "d_true")]
    pub noise_search_enabled: bool,
    #[serde(default = "d_noise_search_iterations")]
    pub noise_search_iterations: usize,
    #[serde(default = "d_noise_search_step")]
    pub noise_search_step: f64,

    // Downstream regression protocol.
    #[serde(default = "d_downstream_hidden")]
    pub downstream_hidden: usize,
    #[serde(default = "d_downstream_epochs")]
    pub downstream_epochs: usize,
    #[serde(default = "d_downstream_lr")]
    pub downstream_lr: f64,
    #[serde(default = "d_downstream_dropout")]
    pub downstream_dropout: f64,
    #[serde(default = "d_downstream_train_fraction")]
    pub downstream_train_fraction: f64,
    /// Index of the regression target feature.
    #[serde(default)]
    pub downstream_target: usize,
    #[serde(default = "d_downstream_ratios")]
    pub downstream_ratios: Vec<f64>,

    #[serde(default = "d_output_dir")]
    pub output_dir: String,
}

fn d_synthetic_windows() -> usize { 2000 }
fn d_synthetic_features() -> usize { 5 }
fn d_synthetic_noise_sd() -> f64 { 0.05 }
fn d_window_length() -> usize { 48 }
fn d_hidden() -> usize { 64 }
fn d_heads() -> usize { 4 }
fn d_true() -> bool { true }
fn d_lambda_r() -> f64 { 10.0 }
fn d_lambda_c() -> f64 { 1.0 }
fn d_lr_generator() -> f64 { 0.001 }
fn d_lr_discriminator() -> f64 { 0.0001 }
fn d_batch_size() -> usize { 128 }
fn d_pretrain_epochs() -> usize { 10 }
fn d_adversarial_epochs() -> usize { 30 }
fn d_hint_ratio() -> f64 { 0.1 }
fn d_grad_clip() -> f64 { 5.0 }
fn d_checkpoint_every() -> usize { 10 }
fn d_holdout_ratio() -> f64 { 0.2 }
fn d_knn_k() -> usize { 10 }
fn d_eval_ratios() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}
fn d_noise_search_iterations() -> usize { 100 }
fn d_noise_search_step() -> f64 { 0.01 }
fn d_downstream_hidden() -> usize { 64 }
fn d_downstream_epochs() -> usize { 20 }
fn d_downstream_lr() -> f64 { 0.001 }
fn d_downstream_dropout() -> f64 { 0.3 }
fn d_downstream_train_fraction() -> f64 { 0.8 }
fn d_downstream_ratios() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}
fn d_output_dir() -> String { "out".into() }

impl ExperimentConfig {
    /// A minimal valid config for the given seed, useful in tests.
    pub fn synthetic_default(seed: u64) -> Self {
        toml::from_str(&format!("seed = {seed}\ndata_source = \"synthetic\""))
            .expect("defaults are valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.as_ref().display()))
        })?;
        Self::from_text(&text, &[])
    }

    /// Parses the file text, applies `key=value` overrides on top (each one
    /// a single TOML assignment), validates the result.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for pair in overrides {
            let line: toml::Table = pair
                .parse()
                .map_err(|e| Error::Config(format!("bad --set '{pair}': {e}")))?;
            for (k, v) in line {
                table.insert(k, v);
            }
        }
        let merged = toml::to_string(&table).expect("table serializes");
        let config: ExperimentConfig =
            toml::from_str(&merged).map_err(|e| Error::Config(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.data_source == DataSource::Csv && self.csv_path.is_none() {
            problems.push("csv_path is required when data_source = \"csv\"".to_string());
        }
        if self.window_length < 2 {
            problems.push(format!("window_length must be at least 2, got {}", self.window_length));
        }
        if self.stride == 0 {
            problems.push("stride must be positive".into());
        }
        if self.hidden_size == 0 || self.disc_hidden_size == 0 {
            problems.push("hidden sizes must be positive".into());
        }
        if self.heads == 0 {
            problems.push("heads must be at least 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        for (name, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("downstream_lr", self.downstream_lr),
        ] {
            if !(v > 0.0) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("lambda_r", self.lambda_r),
            ("lambda_c", self.lambda_c),
            ("grad_clip", self.grad_clip),
            ("noise_search_step", self.noise_search_step),
        ] {
            if v < 0.0 || !v.is_finite() {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_ratio) {
            problems.push(format!("holdout_ratio must be in [0, 1), got {}", self.holdout_ratio));
        }
        if !(0.0..=1.0).contains(&self.hint_ratio) {
            problems.push(format!("hint_ratio must be in [0, 1], got {}", self.hint_ratio));
        }
        if !(0.0..1.0).contains(&self.missing_ratio) {
            problems.push(format!("missing_ratio must be in [0, 1), got {}", self.missing_ratio));
        }
        if !(0.0..1.0).contains(&self.downstream_dropout) {
            problems.push(format!(
                "downstream_dropout must be in [0, 1), got {}",
                self.downstream_dropout
            ));
        }
        if !(0.0 < self.downstream_train_fraction && self.downstream_train_fraction < 1.0) {
            problems.push(format!(
                "downstream_train_fraction must be in (0, 1), got {}",
                self.downstream_train_fraction
            ));
        }
        for r in self.eval_ratios.iter().chain(&self.downstream_ratios) {
            if !(0.0..1.0).contains(r) {
                problems.push(format!("evaluation ratios must be in [0, 1), got {r}"));
            }
        }
        if let Some(c) = self.disc_weight_clip {
            if !(c > 0.0) {
                problems.push(format!("disc_weight_clip must be positive, got {c}"));
            }
        }
        if self.synthetic_features < 1 {
            problems.push("synthetic_features must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
