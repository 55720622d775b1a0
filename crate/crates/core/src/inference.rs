//! Inference: gradient-descent search over the input noise with frozen
//! weights, and final imputation as the mean of the two directional outputs.

use crate::config::ExperimentConfig;
use crate::data::TimeSeriesWindow;
use crate::discriminator::HintMatrix;
use crate::error::{Error, Result};
use crate::generator::{generate_sequence, Direction, GeneratorOutput};
use crate::model::{build_window_graph, sample_noise, GraphOptions, ModelParams};
use crate::seed::Stream;
use ndarray::Array2;

/// Result of the noise search: the best iterate seen, its loss, and whether
/// the search stopped early on a non-finite value.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub z: Array2<f64>,
    pub loss: f64,
    pub warning: bool,
}

/// Plain gradient descent with best-iterate return: evaluates the objective
/// at the start point and after each of `iterations` steps, returning the
/// iterate with the lowest loss. A non-finite loss or gradient stops the
/// search and flags a warning.
pub fn gradient_descent_search<F>(
    z_init: &Array2<f64>,
    iterations: usize,
    step_size: f64,
    mut objective: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let mut z = z_init.clone();
    let mut best_z = z_init.clone();
    let mut best_loss = f64::INFINITY;
    let mut warning = false;
    for iteration in 0..=iterations {
        let (loss, grad) = objective(&z)?;
        if !loss.is_finite() {
            warning = true;
            break;
        }
        if loss < best_loss {
            best_loss = loss;
            best_z = z.clone();
        }
        if iteration == iterations {
            break;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            warning = true;
            break;
        }
        z.zip_mut_with(&grad, |zv, gv| *zv -= step_size * gv);
    }
    if !best_loss.is_finite() {
        // Nothing evaluated cleanly; fall back to the start point.
        best_z = z_init.clone();
    }
    Ok(SearchOutcome {
        z: best_z,
        loss: best_loss,
        warning,
    })
}

/// Generator loss (the training objective) for a window at a fixed noise,
/// with every parameter frozen. The discriminator sees an uninformative hint
/// at inference time.
pub fn generator_loss(
    model: &ModelParams,
    window: &TimeSeriesWindow,
    noise: &Array2<f64>,
    lambda_r: f64,
    lambda_c: f64,
) -> Result<f64> {
    let opts = GraphOptions {
        gen_trainable: false,
        disc_trainable: false,
        noise_trainable: false,
        adversarial: true,
        lambda_r,
        lambda_c,
    };
    let hint = HintMatrix::uninformative(window.x_bar.dim());
    let graph = build_window_graph(model, window, noise, &hint, &opts)?;
    Ok(graph.losses.l_g)
}

/// Searches a better input noise for one window by descending the generator
/// loss with model and discriminator parameters fixed.
pub fn search_noise(
    model: &ModelParams,
    window: &TimeSeriesWindow,
    z_init: &Array2<f64>,
    iterations: usize,
    step_size: f64,
    lambda_r: f64,
    lambda_c: f64,
) -> Result<SearchOutcome> {
    let opts = GraphOptions {
        gen_trainable: false,
        disc_trainable: false,
        noise_trainable: true,
        adversarial: true,
        lambda_r,
        lambda_c,
    };
    let hint = HintMatrix::uninformative(window.x_bar.dim());
    gradient_descent_search(z_init, iterations, step_size, |z| {
        let graph = build_window_graph(model, window, z, &hint, &opts)?;
        let loss = graph.losses.l_g;
        let grads = graph.tape.backward(graph.l_g);
        let dz = grads.get_or_zeros(graph.z, z.dim());
        Ok((loss, dz))
    })
}

/// Search metadata carried on an imputation result.
#[derive(Debug, Clone, Copy)]
pub struct SearchSummary {
    pub loss: f64,
    pub warning: bool,
}

/// The refined complete matrix with per-element provenance and the raw
/// directional outputs.
#[derive(Debug, Clone)]
pub struct ImputationResult {
    /// Refined values (normalized space): observed cells verbatim, missing
    /// cells generated.
    pub values: Array2<f64>,
    /// 1 where the value was generated, 0 where observed.
    pub provenance: Array2<f64>,
    pub forward: GeneratorOutput,
    pub backward: Option<GeneratorOutput>,
    /// Cells whose imputed value fell outside [0, 1] in normalized space;
    /// flagged, never clamped.
    pub out_of_range: Vec<(usize, usize)>,
    pub search: Option<SearchSummary>,
}

/// Runs both generators on the window with the given noise and averages the
/// refined outputs; observed cells are re-asserted afterwards.
pub fn impute(
    window: &TimeSeriesWindow,
    model: &ModelParams,
    noise: &Array2<f64>,
) -> Result<ImputationResult> {
    let forward = generate_sequence(window, noise, &model.gen_fwd, Direction::Forward)?;
    let backward = match &model.gen_bwd {
        Some(params) => Some(generate_sequence(window, noise, params, Direction::Backward)?),
        None => None,
    };
    let mut averaged = match &backward {
        Some(b) => (&forward.x_hat_refined + &b.x_hat_refined) * 0.5,
        None => forward.x_hat_refined.clone(),
    };
    for ((t, d), v) in averaged.indexed_iter_mut() {
        if window.mask.is_observed(t, d) {
            *v = window.x_bar[[t, d]];
        }
    }
    if let Some(((t, _), _)) = averaged
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
    {
        return Err(Error::NonFinite(format!("imputed value at step {t}")));
    }
    let out_of_range = averaged
        .indexed_iter()
        .filter(|&(_, &v)| !(0.0..=1.0).contains(&v))
        .map(|(idx, _)| idx)
        .collect();
    Ok(ImputationResult {
        values: averaged,
        provenance: window.mask.complement(),
        forward,
        backward,
        out_of_range,
        search: None,
    })
}

/// Knobs for one imputation call.
#[derive(Debug, Clone, Copy)]
pub struct InferenceOptions {
    pub search_enabled: bool,
    pub iterations: usize,
    pub step_size: f64,
    pub lambda_r: f64,
    pub lambda_c: f64,
}

impl InferenceOptions {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        InferenceOptions {
            search_enabled: config.noise_search_enabled,
            iterations: config.noise_search_iterations,
            step_size: config.noise_search_step,
            lambda_r: config.lambda_r,
            lambda_c: config.lambda_c,
        }
    }
}

/// Full inference for one window: sample the initial noise from the seed
/// stream, optionally search it, then impute.
pub fn impute_window(
    window: &TimeSeriesWindow,
    model: &ModelParams,
    opts: &InferenceOptions,
    root_seed: u64,
    window_id: u64,
) -> Result<ImputationResult> {
    let z_init = sample_noise(window.x_bar.dim(), root_seed, Stream::Search, &[window_id]);
    if opts.search_enabled && opts.iterations > 0 {
        let outcome = search_noise(
            model,
            window,
            &z_init,
            opts.iterations,
            opts.step_size,
            opts.lambda_r,
            opts.lambda_c,
        )?;
        let mut result = impute(window, model, &outcome.z)?;
        result.search = Some(SearchSummary {
            loss: outcome.loss,
            warning: outcome.warning,
        });
        Ok(result)
    } else {
        impute(window, model, &z_init)
    }
}
