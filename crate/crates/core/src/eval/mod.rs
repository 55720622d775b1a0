//! Evaluation harnesses: held-out RMSE against ground truth, the direct
//! comparison of the model with simple baselines, the downstream regression
//! protocol, and the ablation runner.

pub mod ablation;
pub mod baselines;
pub mod downstream;

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    holdout_dataset, load_csv, make_windows, normalize, HoldoutTargets, NormalizationStats,
    RawSeries, TimeSeriesWindow,
};
use crate::error::{Error, Result};
use crate::inference::InferenceOptions;
use crate::model::ModelParams;
use crate::par;
use crate::synthetic::{corrupt_mcar, gen_sinusoid_mix, thin_rows};
use baselines::{Imputer, KnnImputer, MeanImputer, ModelImputer, PrevImputer};
use ndarray::Array2;

/// Root mean squared error over the held-out cells, in the space the inputs
/// live in (callers pass normalized matrices).
pub fn rmse_heldout(imputed: &Array2<f64>, targets: &HoldoutTargets) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Config("empty evaluation target set".into()));
    }
    let mut acc = 0.0;
    for cell in &targets.cells {
        let diff = imputed[[cell.t, cell.d]] - cell.value;
        acc += diff * diff;
    }
    Ok((acc / targets.len() as f64).sqrt())
}

/// RMSE pooled over a whole window set.
pub fn rmse_dataset(imputed: &[Array2<f64>], targets: &[HoldoutTargets]) -> Result<f64> {
    if imputed.len() != targets.len() {
        return Err(Error::shape(
            "rmse_dataset",
            format!("{} target sets", imputed.len()),
            format!("{}", targets.len()),
        ));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (matrix, t) in imputed.iter().zip(targets) {
        for cell in &t.cells {
            let diff = matrix[[cell.t, cell.d]] - cell.value;
            acc += diff * diff;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("empty evaluation target set".into()));
    }
    Ok((acc / count as f64).sqrt())
}

/// Loads the configured data source (synthetic generation or CSV), applying
/// the configured inherent missingness.
pub fn load_source(config: &ExperimentConfig) -> Result<RawSeries> {
    let mut raw = match config.data_source {
        DataSource::Synthetic => {
            let series = gen_sinusoid_mix(
                config.synthetic_windows,
                config.window_length,
                config.synthetic_features,
                config.synthetic_noise_sd,
                config.seed,
            )?;
            if config.synthetic_irregular {
                thin_rows(&series, 0.7, config.seed)?
            } else {
                series
            }
        }
        DataSource::Csv => {
            let path = config
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::Config("csv_path is required for csv data".into()))?;
            load_csv(path)?
        }
    };
    if config.missing_ratio > 0.0 {
        raw = corrupt_mcar(&raw, config.missing_ratio, config.seed)?;
    }
    Ok(raw)
}

/// Windows with the evaluation holdout applied, normalized, plus the
/// normalized held-out targets and the fitted statistics.
pub struct PreparedData {
    pub train_windows: Vec<TimeSeriesWindow>,
    pub targets: Vec<HoldoutTargets>,
    pub stats: NormalizationStats,
    pub feature_names: Vec<String>,
}

/// Direct-evaluation preparation: window, hold out `holdout_ratio` of the
/// observed cells globally, fit normalization on what remains visible, and
/// map windows and targets into normalized space.
pub fn prepare_direct_eval(config: &ExperimentConfig, holdout_ratio: f64) -> Result<PreparedData> {
    let raw = load_source(config)?;
    let windows = make_windows(&raw, config.window_length, config.stride)?;
    if windows.is_empty() {
        return Err(Error::Config("data source produced no windows".into()));
    }
    let (train_windows, raw_targets) = holdout_dataset(&windows, holdout_ratio, config.seed)?;
    let stats = NormalizationStats::fit_windows(&train_windows)?;
    let train_windows: Vec<TimeSeriesWindow> = train_windows
        .iter()
        .map(|w| normalize(w, &stats))
        .collect::<Result<_>>()?;
    let targets = raw_targets
        .into_iter()
        .map(|mut t| {
            for cell in &mut t.cells {
                cell.value = stats.normalize_value(cell.d, cell.value);
            }
            t
        })
        .collect();
    Ok(PreparedData {
        train_windows,
        targets,
        stats,
        feature_names: raw.feature_names,
    })
}

/// Imputes every window with one imputer, in parallel.
pub fn impute_all(
    imputer: &dyn Imputer,
    windows: &[TimeSeriesWindow],
) -> Result<Vec<Array2<f64>>> {
    let indices: Vec<usize> = (0..windows.len()).collect();
    par::map_ordered(&indices, |&i| imputer.impute_window(&windows[i], i as u64))
        .into_iter()
        .collect()
}

/// One (imputer, RMSE) table.
#[derive(Debug, Clone)]
pub struct DirectEvalReport {
    pub rows: Vec<(String, f64)>,
}

impl DirectEvalReport {
    pub fn rmse_of(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("imputer,rmse\n");
        for (name, rmse) in &self.rows {
            out.push_str(&format!("{name},{rmse}\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("imputer    rmse\n");
        for (name, rmse) in &self.rows {
            out.push_str(&format!("{name:<10} {rmse:.6}\n"));
        }
        out
    }
}

/// Held-out RMSE of the trained model and the three baselines on prepared
/// data.
pub fn evaluate_direct(
    config: &ExperimentConfig,
    model: &ModelParams,
    prepared: &PreparedData,
) -> Result<DirectEvalReport> {
    let gan = ModelImputer {
        model,
        opts: InferenceOptions::from_config(config),
        root_seed: config.seed,
    };
    let mean = MeanImputer::fit(&prepared.train_windows);
    let prev = PrevImputer::fit(&prepared.train_windows);
    let knn = KnnImputer::fit(&prepared.train_windows, config.knn_k);
    let imputers: Vec<&dyn Imputer> = vec![&gan, &mean, &prev, &knn];
    let mut rows = Vec::new();
    for imputer in imputers {
        let imputed = impute_all(imputer, &prepared.train_windows)?;
        let rmse = rmse_dataset(&imputed, &prepared.targets)?;
        rows.push((imputer.name().to_string(), rmse));
    }
    Ok(DirectEvalReport { rows })
}

/// RMSE per (imputer, holdout ratio): the data behind the ratio-sweep plots.
#[derive(Debug, Clone)]
pub struct CurveReport {
    pub ratios: Vec<f64>,
    /// Row per imputer, one RMSE per ratio.
    pub rows: Vec<(String, Vec<f64>)>,
}

impl CurveReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("imputer,ratio,rmse\n");
        for (name, values) in &self.rows {
            for (r, v) in self.ratios.iter().zip(values) {
                out.push_str(&format!("{name},{r},{v}\n"));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("imputer   ");
        for r in &self.ratios {
            out.push_str(&format!(" r={r:<6.2}"));
        }
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(&format!("{name:<10}"));
            for v in values {
                out.push_str(&format!(" {v:<8.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Sweeps the holdout ratio, retraining the model at every point.
pub fn evaluate_curves(config: &ExperimentConfig) -> Result<CurveReport> {
    let mut per_ratio_reports = Vec::new();
    for &ratio in &config.eval_ratios {
        let prepared = prepare_direct_eval(config, ratio)?;
        let (state, _) = crate::training::fit(config, &prepared.train_windows)?;
        per_ratio_reports.push(evaluate_direct(config, &state.model, &prepared)?);
    }
    let names: Vec<String> = per_ratio_reports[0]
        .rows
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let rows = names
        .iter()
        .map(|name| {
            let values = per_ratio_reports
                .iter()
                .map(|r| r.rmse_of(name).expect("imputer present at every ratio"))
                .collect();
            (name.clone(), values)
        })
        .collect();
    Ok(CurveReport {
        ratios: config.eval_ratios.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::holdout_mask;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn rmse_reference_points() {
        let targets = HoldoutTargets {
            cells: vec![crate::data::HeldOutCell {
                t: 0,
                d: 0,
                value: 0.5,
            }],
        };
        let exact = array![[0.5, 9.0]];
        assert_eq!(rmse_heldout(&exact, &targets).unwrap(), 0.0);
        let off = array![[0.3, -4.0]];
        assert!((rmse_heldout(&off, &targets).unwrap() - 0.2).abs() < 1e-12);
        // Values at non-target cells are irrelevant.
        let other = array![[0.3, 123.0]];
        assert_eq!(
            rmse_heldout(&off, &targets).unwrap(),
            rmse_heldout(&other, &targets).unwrap()
        );
        assert!(rmse_heldout(&exact, &HoldoutTargets::default()).is_err());
    }

    #[test]
    fn rmse_matches_per_cell_recomputation() {
        let mut rng = crate::seed::rng_for(3, crate::seed::Stream::Init, &[]);
        for trial in 0..100 {
            let values = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
            let window =
                TimeSeriesWindow::from_raw((0..8).map(|t| t as f64).collect(), &values).unwrap();
            let (_, targets) = holdout_mask(&window, 0.3, trial).unwrap();
            let imputed = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
            let fast = rmse_heldout(&imputed, &targets).unwrap();
            // Brute force: explicit loop over every held-out cell.
            let mut acc = 0.0;
            let mut n = 0;
            for cell in &targets.cells {
                let d = imputed[[cell.t, cell.d]] - cell.value;
                acc += d * d;
                n += 1;
            }
            let slow = (acc / n as f64).sqrt();
            assert!((fast - slow).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn prepared_data_is_normalized_with_targets() {
        let mut cfg = crate::config::ExperimentConfig::synthetic_default(4);
        cfg.synthetic_windows = 4;
        cfg.window_length = 16;
        cfg.stride = 16;
        cfg.synthetic_features = 3;
        let prepared = prepare_direct_eval(&cfg, 0.2).unwrap();
        assert_eq!(prepared.train_windows.len(), 4);
        for w in &prepared.train_windows {
            for ((t, d), &v) in w.x_bar.indexed_iter() {
                if w.mask.is_observed(t, d) {
                    assert!((-1e-9..=1.0 + 1e-9).contains(&v));
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let total: usize = prepared.targets.iter().map(|t| t.len()).sum();
        assert!(total > 0);
        for t in &prepared.targets {
            for cell in &t.cells {
                assert!((-1e-9..=1.0 + 1e-9).contains(&cell.value));
            }
        }
    }
}
