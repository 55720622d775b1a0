//! Ablation runner: retrains the model with one capability removed at a
//! time and reports held-out RMSE next to the full model, mirroring the
//! structure of a leave-one-out study.

use crate::checkpoint::{hash_bytes, model_to_checkpoint};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::eval::baselines::ModelImputer;
use crate::eval::{impute_all, prepare_direct_eval, rmse_dataset, PreparedData};
use crate::inference::InferenceOptions;
use crate::model::ModelParams;
use crate::training;

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub rmse: f64,
    /// Percent increase relative to the full model.
    pub pct_increase: f64,
    /// Hash of the trained weights backing this row.
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,rmse,pct_increase,checkpoint_hash\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.variant, r.rmse, r.pct_increase, r.checkpoint_hash
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("variant            rmse      increase\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:<9.6} ({:+.0}%)\n",
                r.variant, r.rmse, r.pct_increase
            ));
        }
        out
    }
}

fn model_rmse(
    config: &ExperimentConfig,
    model: &ModelParams,
    prepared: &PreparedData,
    search_enabled: bool,
) -> Result<f64> {
    let mut opts = InferenceOptions::from_config(config);
    opts.search_enabled = search_enabled;
    let imputer = ModelImputer {
        model,
        opts,
        root_seed: config.seed,
    };
    let imputed = impute_all(&imputer, &prepared.train_windows)?;
    rmse_dataset(&imputed, &prepared.targets)
}

fn model_hash(model: &ModelParams) -> String {
    hash_bytes(&model_to_checkpoint(model).to_bytes())
}

/// Trains the full model plus the three reduced variants on the same data
/// and holdout, and reports their held-out RMSE. The "w/o optimal noise"
/// row reuses the full model's weights with the inference-time search
/// turned off, so its checkpoint hash equals the full row's.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport> {
    let prepared = prepare_direct_eval(config, config.holdout_ratio)?;

    let (full_state, _) = training::fit(config, &prepared.train_windows)?;
    let full_rmse = model_rmse(config, &full_state.model, &prepared, config.noise_search_enabled)?;
    let full_hash = model_hash(&full_state.model);

    let mut no_attention_cfg = config.clone();
    no_attention_cfg.use_attention = false;
    let (no_attention_state, _) = training::fit(&no_attention_cfg, &prepared.train_windows)?;
    let no_attention_rmse = model_rmse(
        &no_attention_cfg,
        &no_attention_state.model,
        &prepared,
        no_attention_cfg.noise_search_enabled,
    )?;

    let no_search_rmse = model_rmse(config, &full_state.model, &prepared, false)?;

    let mut no_backward_cfg = config.clone();
    no_backward_cfg.bidirectional = false;
    let (no_backward_state, _) = training::fit(&no_backward_cfg, &prepared.train_windows)?;
    let no_backward_rmse = model_rmse(
        &no_backward_cfg,
        &no_backward_state.model,
        &prepared,
        no_backward_cfg.noise_search_enabled,
    )?;

    let pct = |rmse: f64| (rmse / full_rmse - 1.0) * 100.0;
    let rows = vec![
        AblationRow {
            variant: "full".into(),
            rmse: full_rmse,
            pct_increase: 0.0,
            checkpoint_hash: full_hash.clone(),
        },
        AblationRow {
            variant: "w/o attention".into(),
            rmse: no_attention_rmse,
            pct_increase: pct(no_attention_rmse),
            checkpoint_hash: model_hash(&no_attention_state.model),
        },
        AblationRow {
            variant: "w/o optimal noise".into(),
            rmse: no_search_rmse,
            pct_increase: pct(no_search_rmse),
            checkpoint_hash: full_hash,
        },
        AblationRow {
            variant: "w/o backward".into(),
            rmse: no_backward_rmse,
            pct_increase: pct(no_backward_rmse),
            checkpoint_hash: model_hash(&no_backward_state.model),
        },
    ];
    Ok(AblationReport { rows })
}
