//! Scaled dot-product and multi-head attention, plus the two ways the
//! generator uses them: sequence-level self-attention producing context
//! vectors, and per-step temporal attention where a hidden state queries
//! those context vectors.
//!
//! Plain functions here are the reference path; `*_on_tape` builders mirror
//! them op-for-op on a [`Tape`] for training, and the two are tested to be
//! bit-identical.

use crate::error::{Error, Result};
use crate::tape::{softmax_rows_inplace, NodeId, Tape};
use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One head's projection matrices, stored input-major (d_model × head dim).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProjection {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

/// Multi-head attention parameters: per-head Q/K/V projections plus the
/// output projection applied to the concatenated heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams {
    pub heads: Vec<HeadProjection>,
    /// (h · d_v) × d_model.
    pub w_out: Array2<f64>,
}

pub(crate) fn uniform_init(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl MultiHeadParams {
    /// Head dimension is ⌈d_model / h⌉; the output projection absorbs any
    /// excess when d_model is not divisible by the head count.
    pub fn init(d_model: usize, head_count: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(head_count >= 1 && d_model >= 1);
        let head_dim = d_model.div_ceil(head_count);
        let heads = (0..head_count)
            .map(|_| HeadProjection {
                w_q: uniform_init(rng, d_model, head_dim, d_model),
                w_k: uniform_init(rng, d_model, head_dim, d_model),
                w_v: uniform_init(rng, d_model, head_dim, d_model),
            })
            .collect();
        let concat_dim = head_count * head_dim;
        MultiHeadParams {
            heads,
            w_out: uniform_init(rng, concat_dim, d_model, concat_dim),
        }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn d_model(&self) -> usize {
        self.w_out.ncols()
    }
}

/// Query projection plus the attention applied per step in the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalAttentionParams {
    /// hidden × d_model.
    pub proj_w: Array2<f64>,
    /// 1 × d_model.
    pub proj_b: Array2<f64>,
    pub mha: MultiHeadParams,
}

impl TemporalAttentionParams {
    pub fn init(hidden: usize, d_model: usize, head_count: usize, rng: &mut ChaCha8Rng) -> Self {
        TemporalAttentionParams {
            proj_w: uniform_init(rng, hidden, d_model, hidden),
            proj_b: Array2::zeros((1, d_model)),
            mha: MultiHeadParams::init(d_model, head_count, rng),
        }
    }
}

/// Attended values together with the row-stochastic weight matrix.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub values: Array2<f64>,
    pub weights: Array2<f64>,
}

/// softmax(Q·Kᵀ / √d_k) · V.
pub fn scaled_dot_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
) -> Result<AttentionOutput> {
    if q.ncols() != k.ncols() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("K with {} columns", q.ncols()),
            format!("{}", k.ncols()),
        ));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("V with {} rows", k.nrows()),
            format!("{}", v.nrows()),
        ));
    }
    if q.ncols() == 0 {
        return Err(Error::Config("attention key dimension must be at least 1".into()));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut weights = q.dot(&k.t());
    weights.mapv_inplace(|x| x * scale);
    softmax_rows_inplace(&mut weights);
    let values = weights.dot(v);
    Ok(AttentionOutput { values, weights })
}

/// Concatenated per-head attention in projected subspaces, then the output
/// projection. Output has the query's row count and d_model columns.
pub fn multi_head(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    params: &MultiHeadParams,
) -> Result<Array2<f64>> {
    let d_model = params.d_model();
    for (name, m) in [("Q", q), ("K", k), ("V", v)] {
        if m.ncols() != d_model {
            return Err(Error::shape(
                "multi_head",
                format!("{name} with {d_model} columns"),
                format!("{}", m.ncols()),
            ));
        }
    }
    let mut head_outputs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let qi = q.dot(&head.w_q);
        let ki = k.dot(&head.w_k);
        let vi = v.dot(&head.w_v);
        head_outputs.push(scaled_dot_attention(&qi, &ki, &vi)?.values);
    }
    let views: Vec<_> = head_outputs.iter().map(|h| h.view()).collect();
    let concat = concatenate(Axis(1), &views).expect("heads share the query row count");
    if concat.ncols() != params.w_out.nrows() {
        return Err(Error::shape(
            "multi_head",
            format!("W_O with {} rows", concat.ncols()),
            format!("{}", params.w_out.nrows()),
        ));
    }
    Ok(concat.dot(&params.w_out))
}

/// Context vectors: every step attends over the whole sequence (Q = K = V).
pub fn self_attend(sequence: &Array2<f64>, params: &MultiHeadParams) -> Result<Array2<f64>> {
    multi_head(sequence, sequence, sequence, params)
}

/// One hidden state queries the context vectors. The query is first mapped
/// into the attention dimension by the trainable projection.
pub fn temporal_attend(
    query_state: &Array1<f64>,
    context: &Array2<f64>,
    params: &TemporalAttentionParams,
) -> Result<Array1<f64>> {
    if query_state.len() != params.proj_w.nrows() {
        return Err(Error::shape(
            "temporal_attend",
            format!("query of length {}", params.proj_w.nrows()),
            format!("{}", query_state.len()),
        ));
    }
    let q_row = query_state
        .view()
        .insert_axis(Axis(0))
        .dot(&params.proj_w)
        + &params.proj_b;
    let out = multi_head(&q_row, context, context, &params.mha)?;
    Ok(out.row(0).to_owned())
}

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

/// Leaf nodes for one [`MultiHeadParams`] bound to a tape.
pub struct MultiHeadNodes {
    pub heads: Vec<(NodeId, NodeId, NodeId)>,
    pub w_out: NodeId,
}

impl MultiHeadParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MultiHeadNodes {
        let leaf = |tape: &mut Tape, value: &Array2<f64>| {
            if trainable {
                tape.var(value.clone())
            } else {
                tape.constant(value.clone())
            }
        };
        let heads = self
            .heads
            .iter()
            .map(|h| {
                (
                    leaf(tape, &h.w_q),
                    leaf(tape, &h.w_k),
                    leaf(tape, &h.w_v),
                )
            })
            .collect();
        let w_out = leaf(tape, &self.w_out);
        MultiHeadNodes { heads, w_out }
    }
}

/// Leaf nodes for [`TemporalAttentionParams`].
pub struct TemporalAttentionNodes {
    pub proj_w: NodeId,
    pub proj_b: NodeId,
    pub mha: MultiHeadNodes,
}

impl TemporalAttentionParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> TemporalAttentionNodes {
        let proj_w = if trainable {
            tape.var(self.proj_w.clone())
        } else {
            tape.constant(self.proj_w.clone())
        };
        let proj_b = if trainable {
            tape.var(self.proj_b.clone())
        } else {
            tape.constant(self.proj_b.clone())
        };
        TemporalAttentionNodes {
            proj_w,
            proj_b,
            mha: self.mha.bind(tape, trainable),
        }
    }
}

/// Tape mirror of [`scaled_dot_attention`]; returns (values, weights).
pub fn scaled_dot_on_tape(tape: &mut Tape, q: NodeId, k: NodeId, v: NodeId) -> (NodeId, NodeId) {
    let d_k = tape.value(q).ncols();
    let kt = tape.transpose(k);
    let prod = tape.matmul(q, kt);
    let scaled = tape.scale(prod, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    let values = tape.matmul(weights, v);
    (values, weights)
}

/// Tape mirror of [`multi_head`].
pub fn multi_head_on_tape(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    nodes: &MultiHeadNodes,
) -> NodeId {
    let mut head_outputs = Vec::with_capacity(nodes.heads.len());
    for &(w_q, w_k, w_v) in &nodes.heads {
        let qi = tape.matmul(q, w_q);
        let ki = tape.matmul(k, w_k);
        let vi = tape.matmul(v, w_v);
        let (values, _) = scaled_dot_on_tape(tape, qi, ki, vi);
        head_outputs.push(values);
    }
    let concat = tape.concat_cols(&head_outputs);
    tape.matmul(concat, nodes.w_out)
}

/// Tape mirror of [`temporal_attend`] for a 1×hidden query row.
pub fn temporal_attend_on_tape(
    tape: &mut Tape,
    query_row: NodeId,
    context: NodeId,
    nodes: &TemporalAttentionNodes,
) -> NodeId {
    let projected = tape.matmul(query_row, nodes.proj_w);
    let q_row = tape.add(projected, nodes.proj_b);
    multi_head_on_tape(tape, q_row, context, context, &nodes.mha)
}
