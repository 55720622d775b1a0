//! Adam optimizer over ordered parameter sets, gradient extraction from
//! window graphs, and global-norm clipping.

use crate::model::WindowGraph;
use crate::tape::NodeId;
use ndarray::Array2;

/// Gradients (or moments) aligned index-for-index with a `named` parameter
/// ordering.
pub type GradSet = Vec<Array2<f64>>;

pub fn zeros_like(params: &[(String, &Array2<f64>)]) -> GradSet {
    params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect()
}

pub fn add_assign(acc: &mut GradSet, other: &GradSet) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

pub fn scale(grads: &mut GradSet, c: f64) {
    for g in grads.iter_mut() {
        g.mapv_inplace(|v| v * c);
    }
}

pub fn global_norm(grads: &GradSet) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales in place when the global norm exceeds `max_norm`.
pub fn clip_global_norm(grads: &mut GradSet, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        scale(grads, max_norm / norm);
    }
}

/// Pulls the gradients for a registry of leaves out of a backward pass,
/// zero-filled for leaves that received none.
pub fn extract_grads(graph: &WindowGraph, grads: &crate::tape::Gradients, reg: &[NodeId]) -> GradSet {
    reg.iter()
        .map(|&id| grads.get_or_zeros(id, graph.tape.value(id).dim()))
        .collect()
}

/// Adam with bias correction. One instance per player; the moment vectors
/// are aligned with that player's `named` ordering.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn for_params(params: &[(String, &Array2<f64>)]) -> Self {
        let shapes: Vec<_> = params.iter().map(|(_, p)| p.dim()).collect();
        Adam::new(&shapes)
    }

    pub fn step(&mut self, params: &mut [(String, &mut Array2<f64>)], grads: &GradSet, lr: f64) {
        assert_eq!(params.len(), grads.len(), "gradient set misaligned");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((pv, gv), (mv, vv)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Clamp every parameter into [−c, c] (optional discriminator constraint).
pub fn clamp_params(params: &mut [(String, &mut Array2<f64>)], c: f64) {
    for (_, p) in params.iter_mut() {
        p.mapv_inplace(|v| v.clamp(-c, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = array![[1.0, -2.0]];
        let mut params = vec![("p".to_string(), &mut p)];
        let mut adam = Adam::new(&[(1, 2)]);
        let grads = vec![array![[0.5, -0.5]]];
        adam.step(&mut params, &grads, 0.1);
        assert!(p[[0, 0]] < 1.0);
        assert!(p[[0, 1]] > -2.0);
    }

    #[test]
    fn adam_first_step_size_is_learning_rate() {
        // With bias correction the first update has magnitude ≈ lr.
        let mut p = array![[0.0]];
        let mut params = vec![("p".to_string(), &mut p)];
        let mut adam = Adam::new(&[(1, 1)]);
        adam.step(&mut params, &vec![array![[3.7]]], 0.01);
        assert!((p[[0, 0]] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut grads = vec![array![[3.0, 4.0]]];
        clip_global_norm(&mut grads, 1.0);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-12);
        assert!((grads[0][[0, 0]] - 0.6).abs() < 1e-12);
        assert!((grads[0][[0, 1]] - 0.8).abs() < 1e-12);

        let mut small = vec![array![[0.3, 0.4]]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0], array![[0.3, 0.4]]);
    }

    #[test]
    fn clamp_bounds_parameters() {
        let mut p = array![[0.5, -0.5, 0.005]];
        let mut params = vec![("p".to_string(), &mut p)];
        clamp_params(&mut params, 0.01);
        assert_eq!(p, array![[0.01, -0.01, 0.005]]);
    }
}
