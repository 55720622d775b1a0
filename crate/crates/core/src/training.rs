//! Generator pre-training, alternating adversarial optimization, epoch
//! records, and resumable training state.
//!
//! Every draw (noise, hints, shuffling) is keyed on the root seed plus the
//! global step and batch slot, so runs are bit-reproducible, independent of
//! thread count, and resumable mid-run without replaying history. Batch
//! gradients are reduced with fixed chunk boundaries for the same reason.

use crate::checkpoint::{model_from_checkpoint, model_to_checkpoint, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::TimeSeriesWindow;
use crate::discriminator::sample_hint;
use crate::error::{Error, Result};
use crate::model::{
    build_window_graph, sample_noise, GraphOptions, ModelArch, ModelParams, WindowLosses,
};
use crate::optim::{self, Adam, GradSet};
use crate::par;
use crate::seed::{self, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ModelParams,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
    /// Completed epochs (pre-training and adversarial combined).
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub root_seed: u64,
}

impl TrainState {
    pub fn new(config: &ExperimentConfig, feature_dim: usize) -> Self {
        let arch = ModelArch {
            feature_dim,
            hidden: config.hidden_size,
            disc_hidden: config.disc_hidden_size,
            heads: config.heads,
            use_attention: config.use_attention,
            bidirectional: config.bidirectional,
        };
        let model = ModelParams::init(arch, config.seed);
        let opt_gen = Adam::for_params(&model.gen_named());
        let opt_disc = Adam::for_params(&model.disc_named());
        TrainState {
            model,
            opt_gen,
            opt_disc,
            epoch: 0,
            step: 0,
            root_seed: config.seed,
        }
    }
}

/// One line of the metrics log: per-epoch means of every loss term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub l_r_fwd: f64,
    pub l_r_bwd: f64,
    pub l_c: f64,
    pub l_w_fwd: f64,
    pub l_w_bwd: f64,
    pub l_g: f64,
    pub l_d: f64,
}

impl EpochRecord {
    fn from_losses(epoch: usize, step: u64, l: &WindowLosses) -> Self {
        EpochRecord {
            epoch,
            step,
            l_r_fwd: l.l_r_fwd,
            l_r_bwd: l.l_r_bwd,
            l_c: l.l_c,
            l_w_fwd: l.l_w_fwd,
            l_w_bwd: l.l_w_bwd,
            l_g: l.l_g,
            l_d: l.l_d,
        }
    }
}

fn graph_options(config: &ExperimentConfig, adversarial: bool) -> GraphOptions {
    GraphOptions {
        gen_trainable: false,
        disc_trainable: false,
        noise_trainable: false,
        adversarial,
        lambda_r: config.lambda_r,
        lambda_c: config.lambda_c,
    }
}

type BatchResult = Result<(GradSet, WindowLosses)>;

fn merge_batch(a: BatchResult, b: BatchResult) -> BatchResult {
    let (mut ga, mut la) = a?;
    let (gb, lb) = b?;
    optim::add_assign(&mut ga, &gb);
    la.add(&lb);
    Ok((ga, la))
}

/// Runs one player's pass over the batch in parallel: builds the per-window
/// graph, backprops the selected loss, and accumulates gradients with fixed
/// chunk order.
fn batch_pass(
    model: &ModelParams,
    batch: &[&TimeSeriesWindow],
    config: &ExperimentConfig,
    step: u64,
    root: u64,
    opts: GraphOptions,
    player: Player,
) -> Result<(GradSet, WindowLosses)> {
    let items: Vec<usize> = (0..batch.len()).collect();
    let folded = par::fold_chunked(
        &items,
        |&i| -> BatchResult {
            let window = batch[i];
            let noise = sample_noise(window.x_bar.dim(), root, Stream::Noise, &[step, i as u64]);
            let hint_seed = seed::derive(root, Stream::Hint, &[step, i as u64]);
            let hint = sample_hint(&window.mask, config.hint_ratio, hint_seed)?;
            let graph = build_window_graph(model, window, &noise, &hint, &opts)?;
            if let Some(term) = graph.losses.first_non_finite() {
                return Err(Error::NonFinite(format!("{term} at step {step}")));
            }
            let (loss_node, reg) = match player {
                Player::Generator => (graph.l_g, &graph.gen_reg),
                Player::Discriminator => (
                    graph.l_d.ok_or_else(|| {
                        Error::Config("discriminator pass requires the adversarial term".into())
                    })?,
                    &graph.disc_reg,
                ),
            };
            let grads = graph.tape.backward(loss_node);
            let grad_set = optim::extract_grads(&graph, &grads, reg);
            Ok((grad_set, graph.losses))
        },
        merge_batch,
    );
    let (mut grads, mut losses) =
        folded.ok_or_else(|| Error::Config("empty batch".into()))??;
    let scale = 1.0 / batch.len() as f64;
    optim::scale(&mut grads, scale);
    losses.scale(scale);
    if config.grad_clip > 0.0 {
        optim::clip_global_norm(&mut grads, config.grad_clip);
    }
    Ok((grads, losses))
}

#[derive(Clone, Copy)]
enum Player {
    Generator,
    Discriminator,
}

/// One adversarial step: a discriminator update (fresh noise and hint for
/// this step), then a generator update against the just-updated
/// discriminator.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&TimeSeriesWindow],
    config: &ExperimentConfig,
) -> Result<WindowLosses> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let step = state.step;
    let root = state.root_seed;

    let d_opts = GraphOptions {
        disc_trainable: true,
        ..graph_options(config, true)
    };
    let (d_grads, d_losses) = batch_pass(
        &state.model,
        batch,
        config,
        step,
        root,
        d_opts,
        Player::Discriminator,
    )?;
    let mut disc_params = state.model.disc_named_mut();
    state
        .opt_disc
        .step(&mut disc_params, &d_grads, config.lr_discriminator);
    if let Some(clip) = config.disc_weight_clip {
        optim::clamp_params(&mut disc_params, clip);
    }
    drop(disc_params);

    let g_opts = GraphOptions {
        gen_trainable: true,
        ..graph_options(config, true)
    };
    let (g_grads, g_losses) = batch_pass(
        &state.model,
        batch,
        config,
        step,
        root,
        g_opts,
        Player::Generator,
    )?;
    let mut gen_params = state.model.gen_named_mut();
    state
        .opt_gen
        .step(&mut gen_params, &g_grads, config.lr_generator);
    drop(gen_params);

    state.step += 1;
    // Report the generator-phase loss values plus the discriminator loss
    // observed during its own update.
    let mut losses = g_losses;
    losses.l_d = d_losses.l_d;
    Ok(losses)
}

/// One pre-training step: generators only, reconstruction and consistency
/// terms, no discriminator involvement.
pub fn pretrain_step(
    state: &mut TrainState,
    batch: &[&TimeSeriesWindow],
    config: &ExperimentConfig,
) -> Result<WindowLosses> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let opts = GraphOptions {
        gen_trainable: true,
        ..graph_options(config, false)
    };
    let (grads, losses) = batch_pass(
        &state.model,
        batch,
        config,
        state.step,
        state.root_seed,
        opts,
        Player::Generator,
    )?;
    let mut gen_params = state.model.gen_named_mut();
    state
        .opt_gen
        .step(&mut gen_params, &grads, config.lr_generator);
    drop(gen_params);
    state.step += 1;
    Ok(losses)
}

/// One full epoch: seeded shuffle, fixed batching, one step per batch.
fn run_epoch(
    state: &mut TrainState,
    windows: &[TimeSeriesWindow],
    config: &ExperimentConfig,
    adversarial: bool,
) -> Result<EpochRecord> {
    if windows.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut rng = seed::rng_for(state.root_seed, Stream::Shuffle, &[state.epoch as u64]);
    order.shuffle(&mut rng);

    let mut sums = WindowLosses::default();
    let mut steps = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<&TimeSeriesWindow> = chunk.iter().map(|&i| &windows[i]).collect();
        let losses = if adversarial {
            train_step(state, &batch, config)?
        } else {
            pretrain_step(state, &batch, config)?
        };
        sums.add(&losses);
        steps += 1;
    }
    sums.scale(1.0 / steps as f64);
    state.epoch += 1;
    Ok(EpochRecord::from_losses(state.epoch, state.step, &sums))
}

/// Runs `epochs` epochs of generator-only pre-training; the discriminator is
/// untouched.
pub fn pretrain_generators(
    state: &mut TrainState,
    windows: &[TimeSeriesWindow],
    config: &ExperimentConfig,
    epochs: usize,
) -> Result<Vec<EpochRecord>> {
    (0..epochs)
        .map(|_| run_epoch(state, windows, config, false))
        .collect()
}

/// Pre-training followed by adversarial epochs, resuming from `start` when
/// given. `on_epoch` fires after every epoch (metrics streaming, periodic
/// checkpoints).
pub fn fit_with<F>(
    config: &ExperimentConfig,
    windows: &[TimeSeriesWindow],
    start: Option<TrainState>,
    mut on_epoch: F,
) -> Result<(TrainState, Vec<EpochRecord>)>
where
    F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
{
    if windows.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let feature_dim = windows[0].num_features();
    let mut state = start.unwrap_or_else(|| TrainState::new(config, feature_dim));
    if state.model.arch.feature_dim != feature_dim {
        return Err(Error::Config(format!(
            "checkpointed model has {} features but data has {feature_dim}",
            state.model.arch.feature_dim
        )));
    }
    let total = config.pretrain_epochs + config.adversarial_epochs;
    let mut records = Vec::new();
    while state.epoch < total {
        let adversarial = state.epoch >= config.pretrain_epochs;
        let record = run_epoch(&mut state, windows, config, adversarial)?;
        on_epoch(&state, &record)?;
        records.push(record);
    }
    Ok((state, records))
}

pub fn fit(
    config: &ExperimentConfig,
    windows: &[TimeSeriesWindow],
) -> Result<(TrainState, Vec<EpochRecord>)> {
    fit_with(config, windows, None, |_, _| Ok(()))
}

/// Full training state (parameters, optimizer moments, counters) as a
/// checkpoint, suitable for bit-exact resumption.
pub fn state_to_checkpoint(state: &TrainState) -> Checkpoint {
    let mut ck = model_to_checkpoint(&state.model);
    ck.manifest.insert("state.epoch".into(), state.epoch.to_string());
    ck.manifest.insert("state.step".into(), state.step.to_string());
    ck.manifest
        .insert("state.root_seed".into(), state.root_seed.to_string());
    ck.manifest.insert("opt_gen.t".into(), state.opt_gen.t.to_string());
    ck.manifest
        .insert("opt_disc.t".into(), state.opt_disc.t.to_string());
    for ((name, _), m) in state.model.gen_named().iter().zip(&state.opt_gen.m) {
        ck.groups.push((format!("opt_gen.m.{name}"), m.clone()));
    }
    for ((name, _), v) in state.model.gen_named().iter().zip(&state.opt_gen.v) {
        ck.groups.push((format!("opt_gen.v.{name}"), v.clone()));
    }
    for ((name, _), m) in state.model.disc_named().iter().zip(&state.opt_disc.m) {
        ck.groups.push((format!("opt_disc.m.{name}"), m.clone()));
    }
    for ((name, _), v) in state.model.disc_named().iter().zip(&state.opt_disc.v) {
        ck.groups.push((format!("opt_disc.v.{name}"), v.clone()));
    }
    ck
}

pub fn state_from_checkpoint(ck: &Checkpoint) -> Result<TrainState> {
    let model = model_from_checkpoint(ck)?;
    let mut opt_gen = Adam::for_params(&model.gen_named());
    let mut opt_disc = Adam::for_params(&model.disc_named());
    opt_gen.t = ck.manifest_u64("opt_gen.t")?;
    opt_disc.t = ck.manifest_u64("opt_disc.t")?;
    let load_moments = |opt: &mut Adam, prefix: &str, named: &[(String, &ndarray::Array2<f64>)]| -> Result<()> {
        for (i, (name, p)) in named.iter().enumerate() {
            for (kind, slot) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                let key = format!("{prefix}.{kind}.{name}");
                let src = ck
                    .group(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer group '{key}'")))?;
                if src.dim() != p.dim() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer group '{key}' has shape {:?}, expected {:?}",
                        src.dim(),
                        p.dim()
                    )));
                }
                slot.assign(src);
            }
        }
        Ok(())
    };
    load_moments(&mut opt_gen, "opt_gen", &model.gen_named())?;
    load_moments(&mut opt_disc, "opt_disc", &model.disc_named())?;
    let epoch = ck.manifest_u64("state.epoch")? as usize;
    let step = ck.manifest_u64("state.step")?;
    let root_seed = ck.manifest_u64("state.root_seed")?;
    Ok(TrainState {
        model,
        opt_gen,
        opt_disc,
        epoch,
        step,
        root_seed,
    })
}
