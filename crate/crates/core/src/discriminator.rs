//! Hint sampling, the GRU discriminator scoring each element of an imputed
//! matrix as observed-or-generated, and the discriminator loss.

use crate::data::MaskMatrix;
use crate::error::{Error, Result};
use crate::generator::{
    gru_step, gru_step_on_tape, mean_over, GruCellNodes, GruCellParams,
};
use crate::seed::{self, Stream};
use crate::tape::{NodeId, Tape};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Partially revealed copy of the mask: a revealed cell carries the true
/// mask value, an unrevealed cell carries 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct HintMatrix {
    pub entries: Array2<f64>,
}

impl HintMatrix {
    /// A hint that reveals nothing.
    pub fn uninformative(dim: (usize, usize)) -> Self {
        HintMatrix {
            entries: Array2::from_elem(dim, 0.5),
        }
    }
}

/// Per-element realness probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub entries: Array2<f64>,
}

/// Discriminator weights: a plain GRU cell (no decay), then an affine
/// reduction to feature width with a sigmoid per element.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub cell: GruCellParams,
    /// hidden × feature dim.
    pub out_w: Array2<f64>,
    /// 1 × feature dim.
    pub out_b: Array2<f64>,
}

impl DiscriminatorParams {
    pub fn init(feature_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        // Input per step is the imputed row concatenated with the hint row.
        DiscriminatorParams {
            cell: GruCellParams::init(2 * feature_dim, hidden, rng),
            out_w: crate::attention::uniform_init(rng, hidden, feature_dim, hidden),
            out_b: Array2::zeros((1, feature_dim)),
        }
    }

    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        DiscriminatorParams {
            cell: GruCellParams::zeros(2 * feature_dim, hidden),
            out_w: Array2::zeros((hidden, feature_dim)),
            out_b: Array2::zeros((1, feature_dim)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    pub fn feature_dim(&self) -> usize {
        self.out_w.ncols()
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        self.cell.named(&format!("{prefix}.cell"), out);
        out.push((format!("{prefix}.out.w"), &self.out_w));
        out.push((format!("{prefix}.out.b"), &self.out_b));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        self.cell.named_mut(&format!("{prefix}.cell"), out);
        out.push((format!("{prefix}.out.w"), &mut self.out_w));
        out.push((format!("{prefix}.out.b"), &mut self.out_b));
    }
}

/// Independently per cell, reveal the true mask value with probability
/// `hint_ratio`, otherwise emit 0.5.
pub fn sample_hint(mask: &MaskMatrix, hint_ratio: f64, rng_seed: u64) -> Result<HintMatrix> {
    if !(0.0..=1.0).contains(&hint_ratio) {
        return Err(Error::Config(format!(
            "hint ratio must be in [0, 1], got {hint_ratio}"
        )));
    }
    let mut rng = seed::rng_for(rng_seed, Stream::Hint, &[]);
    let entries = mask.entries.mapv(|m| {
        if rng.random::<f64>() < hint_ratio {
            m
        } else {
            0.5
        }
    });
    Ok(HintMatrix { entries })
}

/// Scores each element of the imputed matrix. Per step the GRU consumes the
/// imputed row concatenated with the hint row; the output row is
/// σ(affine(hidden)).
pub fn discriminate(
    x_hat_refined: &Array2<f64>,
    hint: &HintMatrix,
    params: &DiscriminatorParams,
) -> Result<ProbabilityMatrix> {
    if x_hat_refined.dim() != hint.entries.dim() {
        return Err(Error::shape(
            "discriminate",
            format!("{:?}", x_hat_refined.dim()),
            format!("{:?}", hint.entries.dim()),
        ));
    }
    if x_hat_refined.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discriminator input".into()));
    }
    let (t_len, d) = x_hat_refined.dim();
    if 2 * d != params.cell.input_dim() {
        return Err(Error::shape(
            "discriminate",
            format!("{} input features", params.cell.input_dim()),
            format!("{}", 2 * d),
        ));
    }
    let mut h = Array1::zeros(params.hidden());
    let mut probs = Array2::zeros((t_len, d));
    for t in 0..t_len {
        let mut x_in = Array1::zeros(2 * d);
        x_in.slice_mut(ndarray::s![..d]).assign(&x_hat_refined.row(t));
        x_in.slice_mut(ndarray::s![d..]).assign(&hint.entries.row(t));
        h = gru_step(&x_in, &h, &params.cell)?;
        let logits = h.view().insert_axis(Axis(0)).dot(&params.out_w) + &params.out_b;
        probs
            .row_mut(t)
            .assign(&logits.row(0).mapv(|v| 1.0 / (1.0 + (-v).exp())));
    }
    Ok(ProbabilityMatrix { entries: probs })
}

/// Mean score over generated cells minus mean score over observed cells.
/// Bounded in [−1, 1]; empty groups contribute zero.
pub fn loss_discriminator(m_hat: &ProbabilityMatrix, mask: &MaskMatrix) -> f64 {
    let fake_term = mean_over(&m_hat.entries, &mask.complement());
    let real_term = mean_over(&m_hat.entries, &mask.entries);
    fake_term - real_term
}

// ---------------------------------------------------------------------------
// Tape builder
// ---------------------------------------------------------------------------

pub struct DiscriminatorNodes {
    pub cell: GruCellNodes,
    pub out_w: NodeId,
    pub out_b: NodeId,
}

impl DiscriminatorParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool, reg: &mut Vec<NodeId>) -> DiscriminatorNodes {
        let cell = self.cell.bind(tape, trainable, reg);
        let mut leaf = |tape: &mut Tape, v: &Array2<f64>| {
            let id = if trainable {
                tape.var(v.clone())
            } else {
                tape.constant(v.clone())
            };
            reg.push(id);
            id
        };
        let out_w = leaf(tape, &self.out_w);
        let out_b = leaf(tape, &self.out_b);
        DiscriminatorNodes { cell, out_w, out_b }
    }
}

/// Tape mirror of [`discriminate`] against an on-tape imputed matrix.
pub fn discriminate_on_tape(
    tape: &mut Tape,
    disc: &DiscriminatorNodes,
    x_hat: NodeId,
    hint: &Array2<f64>,
    hidden: usize,
) -> NodeId {
    let t_len = tape.value(x_hat).nrows();
    let ones_hidden = tape.constant(Array2::ones((1, hidden)));
    let mut h = tape.constant(Array2::zeros((1, hidden)));
    let mut prob_rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x_row = tape.row(x_hat, t);
        let hint_row = tape.constant(hint.row(t).to_owned().insert_axis(Axis(0)));
        let x_in = tape.concat_cols(&[x_row, hint_row]);
        h = gru_step_on_tape(tape, x_in, h, &disc.cell, ones_hidden);
        let logits = tape.matmul(h, disc.out_w);
        let shifted = tape.add(logits, disc.out_b);
        prob_rows.push(tape.sigmoid(shifted));
    }
    tape.concat_rows(&prob_rows)
}
