//! Indirect evaluation: train a fixed regressor on complete data, corrupt
//! the inputs at several missing ratios, impute them with each method, and
//! compare the regressor's error against the ideal (uncorrupted) run.

use crate::config::ExperimentConfig;
use crate::data::{build_delta, make_windows, normalize, NormalizationStats, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::eval::baselines::{Imputer, KnnImputer, MeanImputer, ModelImputer, PrevImputer};
use crate::eval::{impute_all, load_source};
use crate::generator::{gru_step, gru_step_on_tape, GruCellParams};
use crate::inference::InferenceOptions;
use crate::optim::{self, Adam, GradSet};
use crate::par;
use crate::seed::{self, Stream};
use crate::tape::Tape;
use crate::training;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

/// The fixed downstream regressor: two GRU layers with dropout between them
/// and an affine head predicting the target feature at every step.
#[derive(Debug, Clone)]
pub struct RegressorParams {
    pub cell1: GruCellParams,
    pub cell2: GruCellParams,
    pub head_w: Array2<f64>,
    pub head_b: Array2<f64>,
}

impl RegressorParams {
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, Stream::Regressor, &[]);
        RegressorParams {
            cell1: GruCellParams::init(input_dim, hidden, &mut rng),
            cell2: GruCellParams::init(hidden, hidden, &mut rng),
            head_w: crate::attention::uniform_init(&mut rng, hidden, 1, hidden),
            head_b: Array2::zeros((1, 1)),
        }
    }

    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        self.cell1.named("cell1", &mut out);
        self.cell2.named("cell2", &mut out);
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        self.cell1.named_mut("cell1", &mut out);
        self.cell2.named_mut("cell2", &mut out);
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn hidden(&self) -> usize {
        self.cell1.hidden()
    }
}

/// Splits a complete matrix into regressor inputs (all features but the
/// target) and the target column.
fn split_features(matrix: &Array2<f64>, target: usize) -> (Array2<f64>, Array1<f64>) {
    let (t_len, d) = matrix.dim();
    let mut inputs = Array2::zeros((t_len, d - 1));
    let mut col = 0;
    for j in 0..d {
        if j == target {
            continue;
        }
        inputs.column_mut(col).assign(&matrix.column(j));
        col += 1;
    }
    (inputs, matrix.column(target).to_owned())
}

/// Per-step predictions from a complete input matrix, dropout disabled.
pub fn predict(params: &RegressorParams, inputs: &Array2<f64>) -> Result<Array1<f64>> {
    let hidden = params.hidden();
    let mut h1 = Array1::zeros(hidden);
    let mut h2 = Array1::zeros(hidden);
    let mut out = Array1::zeros(inputs.nrows());
    for (t, row) in inputs.rows().into_iter().enumerate() {
        h1 = gru_step(&row.to_owned(), &h1, &params.cell1)?;
        h2 = gru_step(&h1, &h2, &params.cell2)?;
        out[t] = h2.view().insert_axis(Axis(0)).dot(&params.head_w)[[0, 0]] + params.head_b[[0, 0]];
    }
    Ok(out)
}

fn regressor_window_loss(
    params: &RegressorParams,
    inputs: &Array2<f64>,
    target: &Array1<f64>,
    dropout: Option<&Array2<f64>>,
) -> (GradSet, f64) {
    let mut tape = Tape::new();
    let mut reg = Vec::new();
    let cell1 = params.cell1.bind(&mut tape, true, &mut reg);
    let cell2 = params.cell2.bind(&mut tape, true, &mut reg);
    let head_w = tape.var(params.head_w.clone());
    reg.push(head_w);
    let head_b = tape.var(params.head_b.clone());
    reg.push(head_b);

    let hidden = params.hidden();
    let ones = tape.constant(Array2::ones((1, hidden)));
    let mut h1 = tape.constant(Array2::zeros((1, hidden)));
    let mut h2 = tape.constant(Array2::zeros((1, hidden)));
    let mut predictions = Vec::with_capacity(inputs.nrows());
    for t in 0..inputs.nrows() {
        let x = tape.constant(inputs.row(t).to_owned().insert_axis(Axis(0)));
        h1 = gru_step_on_tape(&mut tape, x, h1, &cell1, ones);
        let l2_in = match dropout {
            Some(mask) => {
                let m = tape.constant(mask.row(t).to_owned().insert_axis(Axis(0)));
                tape.mul(h1, m)
            }
            None => h1,
        };
        h2 = gru_step_on_tape(&mut tape, l2_in, h2, &cell2, ones);
        let projected = tape.matmul(h2, head_w);
        predictions.push(tape.add(projected, head_b));
    }
    let stacked = tape.concat_rows(&predictions);
    let target_node = tape.constant(
        target
            .view()
            .insert_axis(Axis(1))
            .to_owned(),
    );
    let diff = tape.sub(stacked, target_node);
    let sq = tape.mul(diff, diff);
    let n = inputs.nrows() as f64;
    let loss = tape.weighted_sum(sq, Array2::from_elem((inputs.nrows(), 1), 1.0 / n));
    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss);
    let grad_set = reg
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id).dim()))
        .collect();
    (grad_set, loss_value)
}

fn dropout_mask(dim: (usize, usize), p: f64, seed: u64, parts: &[u64]) -> Array2<f64> {
    let mut rng = seed::rng_for(seed, Stream::Dropout, parts);
    let keep = 1.0 - p;
    Array2::from_shape_fn(dim, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Trains the regressor on complete (normalized) windows, predicting the
/// target feature from the remaining ones at every step.
pub fn train_regressor(
    config: &ExperimentConfig,
    windows: &[TimeSeriesWindow],
    target: usize,
) -> Result<RegressorParams> {
    let d = windows
        .first()
        .map(|w| w.num_features())
        .ok_or_else(|| Error::Config("empty regressor training set".into()))?;
    if d < 2 {
        return Err(Error::Config(
            "downstream regression needs at least two features".into(),
        ));
    }
    if target >= d {
        return Err(Error::Config(format!(
            "downstream_target {target} out of range for {d} features"
        )));
    }
    let prepared: Vec<(Array2<f64>, Array1<f64>)> = windows
        .iter()
        .map(|w| split_features(&w.x_bar, target))
        .collect();
    let mut params = RegressorParams::init(d - 1, config.downstream_hidden, config.seed);
    let mut adam = Adam::for_params(&params.named());
    let batch_size = 32usize;

    for epoch in 0..config.downstream_epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut rng = seed::rng_for(config.seed, Stream::Regressor, &[1, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let items: Vec<usize> = chunk.to_vec();
            let folded = par::fold_chunked(
                &items,
                |&i| {
                    let (inputs, target_col) = &prepared[i];
                    let mask = dropout_mask(
                        (inputs.nrows(), params.hidden()),
                        config.downstream_dropout,
                        config.seed,
                        &[epoch as u64, i as u64],
                    );
                    regressor_window_loss(&params, inputs, target_col, Some(&mask))
                },
                |(mut ga, la), (gb, lb)| {
                    optim::add_assign(&mut ga, &gb);
                    (ga, la + lb)
                },
            );
            let (mut grads, _) = folded.expect("non-empty chunk");
            optim::scale(&mut grads, 1.0 / items.len() as f64);
            let mut named = params.named_mut();
            adam.step(&mut named, &grads, config.downstream_lr);
        }
    }
    Ok(params)
}

/// Pooled RMSE of the regressor over complete input matrices against the
/// true target column.
pub fn regression_rmse(
    params: &RegressorParams,
    input_matrices: &[Array2<f64>],
    truth_matrices: &[Array2<f64>],
    target: usize,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (inputs_src, truth) in input_matrices.iter().zip(truth_matrices) {
        let (inputs, _) = split_features(inputs_src, target);
        let predictions = predict(params, &inputs)?;
        let labels = truth.column(target);
        for (p, y) in predictions.iter().zip(labels.iter()) {
            let diff = p - y;
            acc += diff * diff;
            count += 1;
        }
    }
    Ok((acc / count.max(1) as f64).sqrt())
}

/// Rejects corruption sets that touch the regression target.
pub fn validate_corruption_features(features: &[usize], target: usize) -> Result<()> {
    if features.contains(&target) {
        return Err(Error::Config(format!(
            "the regression target (feature {target}) must not be corrupted"
        )));
    }
    Ok(())
}

/// Cell-level MCAR on the listed features of an already-normalized window.
fn corrupt_window_features(
    window: &TimeSeriesWindow,
    features: &[usize],
    ratio: f64,
    seed: u64,
    parts: &[u64],
) -> Result<TimeSeriesWindow> {
    let mut rng = seed::rng_for(seed, Stream::Corrupt, parts);
    let mut out = window.clone();
    for t in 0..window.len() {
        for &j in features {
            if rng.random::<f64>() < ratio {
                out.mask.entries[[t, j]] = 0.0;
                out.x_bar[[t, j]] = 0.0;
            }
        }
    }
    out.delta = build_delta(&out.timestamps, &out.mask)?;
    Ok(out)
}

/// Downstream comparison table: the ideal row plus one row per imputer,
/// one column per missing ratio.
#[derive(Debug, Clone)]
pub struct DownstreamReport {
    pub ratios: Vec<f64>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl DownstreamReport {
    pub fn rmse_of(&self, name: &str, ratio_index: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v[ratio_index])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("imputer");
        for r in &self.ratios {
            out.push_str(&format!(",ratio_{r}"));
        }
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(name);
            for v in values {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
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

/// Runs the full indirect protocol on the configured (complete) data
/// source: train the regressor once on complete training data, then per
/// ratio corrupt, impute with every method, and measure prediction RMSE.
pub fn downstream_eval(config: &ExperimentConfig, ratios: &[f64]) -> Result<DownstreamReport> {
    let raw = load_source(config)?;
    if raw.values.iter().any(|v| v.is_nan()) {
        return Err(Error::Config(
            "the downstream protocol needs a complete dataset (no missing values)".into(),
        ));
    }
    let target = config.downstream_target;
    let windows = make_windows(&raw, config.window_length, config.stride)?;
    let split = ((windows.len() as f64) * config.downstream_train_fraction).floor() as usize;
    if split == 0 || split == windows.len() {
        return Err(Error::Config(format!(
            "downstream split produced an empty side ({split} of {})",
            windows.len()
        )));
    }
    let corrupt_features: Vec<usize> =
        (0..raw.num_features()).filter(|&j| j != target).collect();
    validate_corruption_features(&corrupt_features, target)?;

    let stats = NormalizationStats::fit_windows(&windows[..split])?;
    let train: Vec<TimeSeriesWindow> = windows[..split]
        .iter()
        .map(|w| normalize(w, &stats))
        .collect::<Result<_>>()?;
    let test: Vec<TimeSeriesWindow> = windows[split..]
        .iter()
        .map(|w| normalize(w, &stats))
        .collect::<Result<_>>()?;

    let regressor = train_regressor(config, &train, target)?;
    let truth: Vec<Array2<f64>> = test.iter().map(|w| w.x_bar.clone()).collect();
    let ideal = regression_rmse(&regressor, &truth, &truth, target)?;

    let imputer_names = ["gan", "mean", "prev", "knn"];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); imputer_names.len()];
    for (ri, &ratio) in ratios.iter().enumerate() {
        let train_corrupted: Vec<TimeSeriesWindow> = train
            .iter()
            .enumerate()
            .map(|(i, w)| {
                corrupt_window_features(w, &corrupt_features, ratio, config.seed, &[ri as u64, i as u64])
            })
            .collect::<Result<_>>()?;
        let test_corrupted: Vec<TimeSeriesWindow> = test
            .iter()
            .enumerate()
            .map(|(i, w)| {
                corrupt_window_features(
                    w,
                    &corrupt_features,
                    ratio,
                    config.seed,
                    &[1000 + ri as u64, i as u64],
                )
            })
            .collect::<Result<_>>()?;

        let (state, _) = training::fit(config, &train_corrupted)?;
        let gan = ModelImputer {
            model: &state.model,
            opts: InferenceOptions::from_config(config),
            root_seed: config.seed,
        };
        let mean = MeanImputer::fit(&train_corrupted);
        let prev = PrevImputer::fit(&train_corrupted);
        let knn = KnnImputer::fit(&train_corrupted, config.knn_k);
        let imputers: Vec<&dyn Imputer> = vec![&gan, &mean, &prev, &knn];
        for (imputer, column) in imputers.into_iter().zip(columns.iter_mut()) {
            let imputed = impute_all(imputer, &test_corrupted)?;
            column.push(regression_rmse(&regressor, &imputed, &truth, target)?);
        }
    }

    let mut rows = vec![("ideal".to_string(), vec![ideal; ratios.len()])];
    for (name, column) in imputer_names.iter().zip(columns) {
        rows.push((name.to_string(), column));
    }
    Ok(DownstreamReport {
        ratios: ratios.to_vec(),
        rows,
    })
}
