//! Dense tensors, a gradient tape, Adam, and finite-difference checking.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_params};
pub use graph::{AttentionLayout, Gradients, Graph, Segment, Var};
pub use optim::{OptimizerState, WarmupSchedule};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use crate::error::Result;

/// Matrix product of two constant tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(a, b)?;
    Ok(g.value(c).clone())
}

/// Softmax along the last axis; `mask[i] == true` removes entry `i`.
pub fn softmax(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let mut g = Graph::inference();
    let x = g.constant(x.clone());
    let y = g.softmax(x, mask)?;
    Ok(g.value(y).clone())
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let mut g = Graph::inference();
    let x = g.constant(x.clone());
    let gm = g.constant(gamma.clone());
    let bt = g.constant(beta.clone());
    let y = g.layer_norm(x, gm, bt, eps)?;
    Ok(g.value(y).clone())
}

/// `1 - a.b / (|a| |b|)` for two vectors.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    let mut g = Graph::inference();
    let a = g.constant(Tensor::new(&[1, a.len()], a.to_vec())?);
    let b = g.constant(Tensor::new(&[1, b.len()], b.to_vec())?);
    let d = g.cosine_distance(a, b)?;
    Ok(g.value(d).data()[0])
}

/// Cosine similarity `1 - cosine_distance`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    cosine_distance(a, b).map(|d| 1.0 - d)
}

/// Mean negative log-likelihood of `targets` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f32> {
    let mut g = Graph::inference();
    let l = g.constant(logits.clone());
    let y = g.cross_entropy(l, targets, 0.0)?;
    Ok(g.value(y).data()[0])
}
