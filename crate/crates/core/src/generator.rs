//! One directional generator: temporal-decay layer, double GRU (a main cell
//! carrying decayed state and a generation cell emitting the imputed vector),
//! attention wiring, the sequence rollout, and the generator-side losses.
//!
//! The rollout is built on a [`Tape`], so the same wiring serves plain
//! generation (all leaves constant) and training / noise search (parameter
//! or noise leaves differentiable).

use crate::attention::{
    self, multi_head_on_tape, temporal_attend_on_tape, MultiHeadNodes, MultiHeadParams,
    TemporalAttentionNodes, TemporalAttentionParams,
};
use crate::data::{MaskMatrix, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use ndarray::{s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

/// Direction a generator processes the sequence in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Temporal decay layer parameters. `w_gamma` is stored input-major
/// (feature dim × hidden) so a lag row maps to a hidden-sized rate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayParams {
    pub w_gamma: Array2<f64>,
    /// 1 × hidden.
    pub b_gamma: Array2<f64>,
}

impl DecayParams {
    pub fn init(feature_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        // Non-negative initial rates keep the decay monotone in the lag
        // from the first step.
        let mut w_gamma = attention::uniform_init(rng, feature_dim, hidden, feature_dim);
        w_gamma.mapv_inplace(f64::abs);
        DecayParams {
            w_gamma,
            b_gamma: Array2::zeros((1, hidden)),
        }
    }
}

/// Gate weights for one GRU cell: input weights `w_*`, recurrent weights
/// `u_*`, biases `b_*` for the reset, update, and new gates. The update gate
/// is named `u` rather than `z` to stay clear of the noise vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_reset: Array2<f64>,
    pub u_reset: Array2<f64>,
    pub b_reset: Array2<f64>,
    pub w_update: Array2<f64>,
    pub u_update: Array2<f64>,
    pub b_update: Array2<f64>,
    pub w_new: Array2<f64>,
    pub u_new: Array2<f64>,
    pub b_new: Array2<f64>,
}

impl GruCellParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = |rng: &mut ChaCha8Rng| attention::uniform_init(rng, input_dim, hidden, input_dim);
        let u = |rng: &mut ChaCha8Rng| attention::uniform_init(rng, hidden, hidden, hidden);
        GruCellParams {
            w_reset: w(rng),
            u_reset: u(rng),
            b_reset: Array2::zeros((1, hidden)),
            w_update: w(rng),
            u_update: u(rng),
            b_update: Array2::zeros((1, hidden)),
            w_new: w(rng),
            u_new: u(rng),
            b_new: Array2::zeros((1, hidden)),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruCellParams {
            w_reset: Array2::zeros((input_dim, hidden)),
            u_reset: Array2::zeros((hidden, hidden)),
            b_reset: Array2::zeros((1, hidden)),
            w_update: Array2::zeros((input_dim, hidden)),
            u_update: Array2::zeros((hidden, hidden)),
            b_update: Array2::zeros((1, hidden)),
            w_new: Array2::zeros((input_dim, hidden)),
            u_new: Array2::zeros((hidden, hidden)),
            b_new: Array2::zeros((1, hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_reset.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_reset.nrows()
    }
}

/// Both attention modules of one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorAttention {
    pub self_attn: MultiHeadParams,
    pub temporal: TemporalAttentionParams,
}

/// All trainable weights of one directional generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    /// None when the architecture runs without attention (ablation).
    pub attention: Option<GeneratorAttention>,
    pub decay: DecayParams,
    pub main_cell: GruCellParams,
    pub generation_cell: GruCellParams,
    /// hidden × feature dim.
    pub out_w: Array2<f64>,
    /// 1 × feature dim.
    pub out_b: Array2<f64>,
}

impl GeneratorParams {
    pub fn init(
        feature_dim: usize,
        hidden: usize,
        heads: usize,
        use_attention: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d_model = feature_dim;
        let attention = use_attention.then(|| GeneratorAttention {
            self_attn: MultiHeadParams::init(d_model, heads, rng),
            temporal: TemporalAttentionParams::init(hidden, d_model, heads, rng),
        });
        let input_dim = if use_attention {
            feature_dim + d_model
        } else {
            feature_dim
        };
        GeneratorParams {
            attention,
            decay: DecayParams::init(feature_dim, hidden, rng),
            main_cell: GruCellParams::init(input_dim, hidden, rng),
            generation_cell: GruCellParams::init(input_dim, hidden, rng),
            out_w: attention::uniform_init(rng, hidden, feature_dim, hidden),
            out_b: Array2::zeros((1, feature_dim)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.main_cell.hidden()
    }

    pub fn feature_dim(&self) -> usize {
        self.out_w.ncols()
    }
}

/// Generated sequence before and after observed-value substitution, plus
/// the hidden trajectories of both cells.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub x_hat_raw: Array2<f64>,
    pub x_hat_refined: Array2<f64>,
    pub hidden_main: Array2<f64>,
    pub hidden_gen: Array2<f64>,
}

// ---------------------------------------------------------------------------
// Plain reference operations
// ---------------------------------------------------------------------------

/// Decay rates γ = exp(−max(0, δ·W_γ + b_γ)); every component lies in (0, 1].
pub fn decay_rates(delta_row: &Array1<f64>, params: &DecayParams) -> Array1<f64> {
    let pre = delta_row.view().insert_axis(Axis(0)).dot(&params.w_gamma) + &params.b_gamma;
    pre.row(0).mapv(|x| (-x.max(0.0)).exp())
}

/// Elementwise attenuation of the previous hidden state.
pub fn apply_decay(h_prev: &Array1<f64>, gamma: &Array1<f64>) -> Result<Array1<f64>> {
    if h_prev.len() != gamma.len() {
        return Err(Error::shape(
            "apply_decay",
            format!("{} components", h_prev.len()),
            format!("{}", gamma.len()),
        ));
    }
    Ok(h_prev * gamma)
}

/// One GRU step: reset and update gates, candidate state, convex blend.
pub fn gru_step(
    x_in: &Array1<f64>,
    h_prev: &Array1<f64>,
    params: &GruCellParams,
) -> Result<Array1<f64>> {
    if x_in.len() != params.input_dim() || h_prev.len() != params.hidden() {
        return Err(Error::shape(
            "gru_step",
            format!("input {} / hidden {}", params.input_dim(), params.hidden()),
            format!("input {} / hidden {}", x_in.len(), h_prev.len()),
        ));
    }
    let x = x_in.view().insert_axis(Axis(0));
    let h = h_prev.view().insert_axis(Axis(0));
    let sigmoid = |m: Array2<f64>| m.mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let r = sigmoid(x.dot(&params.w_reset) + h.dot(&params.u_reset) + &params.b_reset);
    let u = sigmoid(x.dot(&params.w_update) + h.dot(&params.u_update) + &params.b_update);
    let rh = &r * &h;
    let n = (x.dot(&params.w_new) + rh.dot(&params.u_new) + &params.b_new).mapv(f64::tanh);
    let out = (1.0 - &u) * &n + &u * &h;
    Ok(out.row(0).to_owned())
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean over `selector`-marked cells; 0 when the selection is empty.
pub fn mean_over(values: &Array2<f64>, selector: &Array2<f64>) -> f64 {
    let count: f64 = selector.sum();
    (values * selector).sum() / count.max(1.0)
}

/// Squared reconstruction error over observed cells, computed on the
/// pre-refinement output.
pub fn loss_reconstruction(x: &Array2<f64>, x_hat_raw: &Array2<f64>, mask: &MaskMatrix) -> f64 {
    let diff = x - x_hat_raw;
    mean_over(&(&diff * &diff), &mask.entries)
}

/// Mean absolute disagreement between the two directions, both already in
/// original time order and pre-refinement.
pub fn loss_consistency(x_hat_fwd: &Array2<f64>, x_hat_bwd: &Array2<f64>) -> Result<f64> {
    if x_hat_fwd.dim() != x_hat_bwd.dim() {
        return Err(Error::shape(
            "loss_consistency",
            format!("{:?}", x_hat_fwd.dim()),
            format!("{:?}", x_hat_bwd.dim()),
        ));
    }
    let diff = (x_hat_fwd - x_hat_bwd).mapv(f64::abs);
    let n = (diff.len() as f64).max(1.0);
    Ok(diff.sum() / n)
}

/// Adversarial term: the generator wants the discriminator to score
/// originally-missing cells as real. Zero when nothing is missing.
pub fn loss_generator_adversarial(m_hat: &Array2<f64>, mask: &MaskMatrix) -> f64 {
    -mean_over(m_hat, &mask.complement())
}

/// λ_r·L_R + λ_c·L_C + L_W, with L_R and L_W already summed over both
/// directions and L_C counted once.
pub fn loss_generator_total(l_r: f64, l_c: f64, l_w: f64, lambda_r: f64, lambda_c: f64) -> f64 {
    lambda_r * l_r + lambda_c * l_c + l_w
}

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

pub struct DecayNodes {
    pub w_gamma: NodeId,
    pub b_gamma: NodeId,
}

pub struct GruCellNodes {
    pub w_reset: NodeId,
    pub u_reset: NodeId,
    pub b_reset: NodeId,
    pub w_update: NodeId,
    pub u_update: NodeId,
    pub b_update: NodeId,
    pub w_new: NodeId,
    pub u_new: NodeId,
    pub b_new: NodeId,
}

pub struct GeneratorNodes {
    pub attention: Option<(MultiHeadNodes, TemporalAttentionNodes)>,
    pub decay: DecayNodes,
    pub main_cell: GruCellNodes,
    pub generation_cell: GruCellNodes,
    pub out_w: NodeId,
    pub out_b: NodeId,
}

fn leaf(tape: &mut Tape, value: &Array2<f64>, trainable: bool, reg: &mut Vec<NodeId>) -> NodeId {
    let id = if trainable {
        tape.var(value.clone())
    } else {
        tape.constant(value.clone())
    };
    reg.push(id);
    id
}

impl GruCellParams {
    /// Binds the nine weight arrays as leaves, pushing their ids onto `reg`
    /// in the same order as [`GruCellParams::named`].
    pub fn bind(&self, tape: &mut Tape, trainable: bool, reg: &mut Vec<NodeId>) -> GruCellNodes {
        GruCellNodes {
            w_reset: leaf(tape, &self.w_reset, trainable, reg),
            u_reset: leaf(tape, &self.u_reset, trainable, reg),
            b_reset: leaf(tape, &self.b_reset, trainable, reg),
            w_update: leaf(tape, &self.w_update, trainable, reg),
            u_update: leaf(tape, &self.u_update, trainable, reg),
            b_update: leaf(tape, &self.b_update, trainable, reg),
            w_new: leaf(tape, &self.w_new, trainable, reg),
            u_new: leaf(tape, &self.u_new, trainable, reg),
            b_new: leaf(tape, &self.b_new, trainable, reg),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.w_reset"), &self.w_reset));
        out.push((format!("{prefix}.u_reset"), &self.u_reset));
        out.push((format!("{prefix}.b_reset"), &self.b_reset));
        out.push((format!("{prefix}.w_update"), &self.w_update));
        out.push((format!("{prefix}.u_update"), &self.u_update));
        out.push((format!("{prefix}.b_update"), &self.b_update));
        out.push((format!("{prefix}.w_new"), &self.w_new));
        out.push((format!("{prefix}.u_new"), &self.u_new));
        out.push((format!("{prefix}.b_new"), &self.b_new));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push((format!("{prefix}.w_reset"), &mut self.w_reset));
        out.push((format!("{prefix}.u_reset"), &mut self.u_reset));
        out.push((format!("{prefix}.b_reset"), &mut self.b_reset));
        out.push((format!("{prefix}.w_update"), &mut self.w_update));
        out.push((format!("{prefix}.u_update"), &mut self.u_update));
        out.push((format!("{prefix}.b_update"), &mut self.b_update));
        out.push((format!("{prefix}.w_new"), &mut self.w_new));
        out.push((format!("{prefix}.u_new"), &mut self.u_new));
        out.push((format!("{prefix}.b_new"), &mut self.b_new));
    }
}

impl MultiHeadParams {
    pub fn bind_registered(
        &self,
        tape: &mut Tape,
        trainable: bool,
        reg: &mut Vec<NodeId>,
    ) -> MultiHeadNodes {
        let heads = self
            .heads
            .iter()
            .map(|h| {
                (
                    leaf(tape, &h.w_q, trainable, reg),
                    leaf(tape, &h.w_k, trainable, reg),
                    leaf(tape, &h.w_v, trainable, reg),
                )
            })
            .collect();
        let w_out = leaf(tape, &self.w_out, trainable, reg);
        MultiHeadNodes { heads, w_out }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{i}.w_q"), &h.w_q));
            out.push((format!("{prefix}.head{i}.w_k"), &h.w_k));
            out.push((format!("{prefix}.head{i}.w_v"), &h.w_v));
        }
        out.push((format!("{prefix}.w_out"), &self.w_out));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("{prefix}.head{i}.w_q"), &mut h.w_q));
            out.push((format!("{prefix}.head{i}.w_k"), &mut h.w_k));
            out.push((format!("{prefix}.head{i}.w_v"), &mut h.w_v));
        }
        out.push((format!("{prefix}.w_out"), &mut self.w_out));
    }
}

impl TemporalAttentionParams {
    pub fn bind_registered(
        &self,
        tape: &mut Tape,
        trainable: bool,
        reg: &mut Vec<NodeId>,
    ) -> TemporalAttentionNodes {
        TemporalAttentionNodes {
            proj_w: leaf(tape, &self.proj_w, trainable, reg),
            proj_b: leaf(tape, &self.proj_b, trainable, reg),
            mha: self.mha.bind_registered(tape, trainable, reg),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.proj_w"), &self.proj_w));
        out.push((format!("{prefix}.proj_b"), &self.proj_b));
        self.mha.named(prefix, out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push((format!("{prefix}.proj_w"), &mut self.proj_w));
        out.push((format!("{prefix}.proj_b"), &mut self.proj_b));
        self.mha.named_mut(prefix, out);
    }
}

impl GeneratorParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool, reg: &mut Vec<NodeId>) -> GeneratorNodes {
        let attention = self.attention.as_ref().map(|a| {
            let self_nodes = a.self_attn.bind_registered(tape, trainable, reg);
            let temporal_nodes = a.temporal.bind_registered(tape, trainable, reg);
            (self_nodes, temporal_nodes)
        });
        GeneratorNodes {
            attention,
            decay: DecayNodes {
                w_gamma: leaf(tape, &self.decay.w_gamma, trainable, reg),
                b_gamma: leaf(tape, &self.decay.b_gamma, trainable, reg),
            },
            main_cell: self.main_cell.bind(tape, trainable, reg),
            generation_cell: self.generation_cell.bind(tape, trainable, reg),
            out_w: leaf(tape, &self.out_w, trainable, reg),
            out_b: leaf(tape, &self.out_b, trainable, reg),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        if let Some(a) = &self.attention {
            a.self_attn.named(&format!("{prefix}.self_attn"), out);
            a.temporal.named(&format!("{prefix}.temporal"), out);
        }
        out.push((format!("{prefix}.decay.w_gamma"), &self.decay.w_gamma));
        out.push((format!("{prefix}.decay.b_gamma"), &self.decay.b_gamma));
        self.main_cell.named(&format!("{prefix}.main"), out);
        self.generation_cell.named(&format!("{prefix}.generation"), out);
        out.push((format!("{prefix}.out.w"), &self.out_w));
        out.push((format!("{prefix}.out.b"), &self.out_b));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        if let Some(a) = &mut self.attention {
            a.self_attn.named_mut(&format!("{prefix}.self_attn"), out);
            a.temporal.named_mut(&format!("{prefix}.temporal"), out);
        }
        out.push((format!("{prefix}.decay.w_gamma"), &mut self.decay.w_gamma));
        out.push((format!("{prefix}.decay.b_gamma"), &mut self.decay.b_gamma));
        self.main_cell.named_mut(&format!("{prefix}.main"), out);
        self.generation_cell
            .named_mut(&format!("{prefix}.generation"), out);
        out.push((format!("{prefix}.out.w"), &mut self.out_w));
        out.push((format!("{prefix}.out.b"), &mut self.out_b));
    }
}

/// Tape mirror of [`gru_step`] for 1×n rows.
pub fn gru_step_on_tape(
    tape: &mut Tape,
    x_in: NodeId,
    h_prev: NodeId,
    cell: &GruCellNodes,
    ones_hidden: NodeId,
) -> NodeId {
    let pre_r = {
        let xw = tape.matmul(x_in, cell.w_reset);
        let hu = tape.matmul(h_prev, cell.u_reset);
        let sum = tape.add(xw, hu);
        tape.add(sum, cell.b_reset)
    };
    let r = tape.sigmoid(pre_r);
    let pre_u = {
        let xw = tape.matmul(x_in, cell.w_update);
        let hu = tape.matmul(h_prev, cell.u_update);
        let sum = tape.add(xw, hu);
        tape.add(sum, cell.b_update)
    };
    let u = tape.sigmoid(pre_u);
    let rh = tape.mul(r, h_prev);
    let pre_n = {
        let xw = tape.matmul(x_in, cell.w_new);
        let rhu = tape.matmul(rh, cell.u_new);
        let sum = tape.add(xw, rhu);
        tape.add(sum, cell.b_new)
    };
    let n = tape.tanh(pre_n);
    let one_minus_u = tape.sub(ones_hidden, u);
    let blend_new = tape.mul(one_minus_u, n);
    let blend_old = tape.mul(u, h_prev);
    tape.add(blend_new, blend_old)
}

/// Tape mirror of [`decay_rates`] for a constant 1×D lag row.
pub fn decay_rates_on_tape(
    tape: &mut Tape,
    delta_row: NodeId,
    decay: &DecayNodes,
) -> NodeId {
    let dw = tape.matmul(delta_row, decay.w_gamma);
    let pre = tape.add(dw, decay.b_gamma);
    let rect = tape.relu(pre);
    let neg = tape.neg(rect);
    tape.exp(neg)
}

/// Matrices for one rollout direction, already flipped for [`Direction::Backward`].
pub struct DirectionData {
    pub x_bar: Array2<f64>,
    pub mask: Array2<f64>,
    pub delta: Array2<f64>,
}

impl DirectionData {
    /// The lag matrix for the backward direction is rebuilt from the flipped
    /// mask and reversed gaps, not a row-flip of the forward one, so it keeps
    /// its meaning of "time since last observation" in processing order.
    pub fn from_window(window: &TimeSeriesWindow, direction: Direction) -> Self {
        match direction {
            Direction::Forward => DirectionData {
                x_bar: window.x_bar.clone(),
                mask: window.mask.entries.clone(),
                delta: window.delta.entries.clone(),
            },
            Direction::Backward => DirectionData {
                x_bar: window.x_bar.slice(s![..;-1, ..]).to_owned(),
                mask: window.mask.entries.slice(s![..;-1, ..]).to_owned(),
                delta: window.delta_reversed().entries,
            },
        }
    }
}

/// Nodes of one rollout in processing order (flipped time for backward).
pub struct RolloutNodes {
    pub x_hat_raw: NodeId,
    pub x_hat_refined: NodeId,
    pub hidden_main: Vec<NodeId>,
    pub hidden_gen: Vec<NodeId>,
}

/// Unrolls one generator over the window. `z` must already be in processing
/// order (the caller flips it for the backward direction).
pub fn build_rollout(
    tape: &mut Tape,
    gen: &GeneratorNodes,
    data: &DirectionData,
    z: NodeId,
    hidden: usize,
) -> RolloutNodes {
    let t_len = data.x_bar.nrows();
    let fill = data.mask.mapv(|m| 1.0 - m);

    let x_bar = tape.constant(data.x_bar.clone());
    let fill_node = tape.constant(fill.clone());
    // x̃ = x̄ + (1−m) ⊙ z: noise standing in for every missing cell.
    let noise_part = tape.mul(fill_node, z);
    let x_tilde = tape.add(x_bar, noise_part);

    let context = gen
        .attention
        .as_ref()
        .map(|(self_attn, _)| multi_head_on_tape(tape, x_tilde, x_tilde, x_tilde, self_attn));

    let ones_hidden = tape.constant(Array2::ones((1, hidden)));
    let zeros_hidden = tape.constant(Array2::zeros((1, hidden)));
    let mut h = zeros_hidden;
    let mut hg = zeros_hidden;
    let mut step_input = tape.row(x_tilde, 0);
    let mut x_hat_rows = Vec::with_capacity(t_len);
    let mut hidden_main = Vec::with_capacity(t_len);
    let mut hidden_gen = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let delta_row = tape.constant(
            data.delta
                .row(t)
                .to_owned()
                .insert_axis(Axis(0)),
        );
        let gamma = decay_rates_on_tape(tape, delta_row, &gen.decay);
        let h_prime = tape.mul(gamma, h);

        let x_in = match (&gen.attention, context) {
            (Some((_, temporal)), Some(ctx)) => {
                let attended = temporal_attend_on_tape(tape, h_prime, ctx, temporal);
                tape.concat_cols(&[step_input, attended])
            }
            _ => step_input,
        };

        h = gru_step_on_tape(tape, x_in, h_prime, &gen.main_cell, ones_hidden);
        hg = gru_step_on_tape(tape, x_in, hg, &gen.generation_cell, ones_hidden);
        hidden_main.push(h);
        hidden_gen.push(hg);

        let projected = tape.matmul(hg, gen.out_w);
        let x_hat_t = tape.add(projected, gen.out_b);
        x_hat_rows.push(x_hat_t);

        if t + 1 < t_len {
            // Observed values are fed back as-is; generated values stand in
            // at the next step's missing cells.
            let keep_row = tape.constant(data.x_bar.row(t + 1).to_owned().insert_axis(Axis(0)));
            let fill_row = tape.constant(fill.row(t + 1).to_owned().insert_axis(Axis(0)));
            let filled = tape.mul(fill_row, x_hat_t);
            step_input = tape.add(keep_row, filled);
        }
    }

    let x_hat_raw = tape.concat_rows(&x_hat_rows);
    let x_bar_again = tape.constant(data.x_bar.clone());
    let fill_again = tape.constant(fill);
    let generated_part = tape.mul(fill_again, x_hat_raw);
    let x_hat_refined = tape.add(x_bar_again, generated_part);
    RolloutNodes {
        x_hat_raw,
        x_hat_refined,
        hidden_main,
        hidden_gen,
    }
}

/// Tape mirror of [`loss_reconstruction`]: squared error against the
/// observed cells of `x_bar`, averaged over the observed count.
pub fn loss_reconstruction_on_tape(
    tape: &mut Tape,
    x_bar: &Array2<f64>,
    mask: &Array2<f64>,
    x_hat_raw: NodeId,
) -> NodeId {
    let target = tape.constant(x_bar.clone());
    let diff = tape.sub(target, x_hat_raw);
    let sq = tape.mul(diff, diff);
    let denom = mask.sum().max(1.0);
    tape.weighted_sum(sq, mask / denom)
}

/// Tape mirror of [`loss_consistency`]; both inputs in original time order.
pub fn loss_consistency_on_tape(tape: &mut Tape, fwd: NodeId, bwd: NodeId) -> NodeId {
    let diff = tape.sub(fwd, bwd);
    let abs = tape.abs(diff);
    let n = tape.value(fwd).len() as f64;
    let weights = Array2::from_elem(tape.value(fwd).dim(), 1.0 / n.max(1.0));
    tape.weighted_sum(abs, weights)
}

/// Weight matrix selecting missing cells, normalized by their count. The
/// weighted sum of a probability matrix with these weights is the mean over
/// missing cells (the adversarial term up to sign, and the fake term of the
/// discriminator loss).
pub fn missing_mean_weights(mask: &Array2<f64>) -> Array2<f64> {
    let fill = mask.mapv(|m| 1.0 - m);
    let count = fill.sum().max(1.0);
    fill / count
}

/// Weight matrix selecting observed cells, normalized by their count.
pub fn observed_mean_weights(mask: &Array2<f64>) -> Array2<f64> {
    let count = mask.sum().max(1.0);
    mask / count
}

/// Runs one generator over a window. For the backward direction all inputs
/// are flipped, the rollout runs identically, and the outputs are flipped
/// back to original time order.
pub fn generate_sequence(
    window: &TimeSeriesWindow,
    noise: &Array2<f64>,
    params: &GeneratorParams,
    direction: Direction,
) -> Result<GeneratorOutput> {
    if noise.dim() != window.x_bar.dim() {
        return Err(Error::shape(
            "generate_sequence",
            format!("noise {:?}", window.x_bar.dim()),
            format!("{:?}", noise.dim()),
        ));
    }
    let mut tape = Tape::new();
    let mut reg = Vec::new();
    let nodes = params.bind(&mut tape, false, &mut reg);
    let data = DirectionData::from_window(window, direction);
    let z0 = tape.constant(noise.clone());
    let z = match direction {
        Direction::Forward => z0,
        Direction::Backward => tape.flip_rows(z0),
    };
    let rollout = build_rollout(&mut tape, &nodes, &data, z, params.hidden());

    let unflip = |m: &Array2<f64>| -> Array2<f64> {
        match direction {
            Direction::Forward => m.clone(),
            Direction::Backward => m.slice(s![..;-1, ..]).to_owned(),
        }
    };
    let x_hat_raw = unflip(tape.value(rollout.x_hat_raw));
    let x_hat_refined = unflip(tape.value(rollout.x_hat_refined));
    for (t, row) in x_hat_raw.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("generated output at step {t}")));
        }
    }
    let stack = |ids: &[NodeId]| -> Array2<f64> {
        let rows: Vec<_> = ids.iter().map(|&id| tape.value(id).view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &rows).expect("uniform hidden width");
        unflip(&stacked)
    };
    Ok(GeneratorOutput {
        x_hat_raw,
        x_hat_refined,
        hidden_main: stack(&rollout.hidden_main),
        hidden_gen: stack(&rollout.hidden_gen),
    })
}

#[cfg(test)]
mod tests;
