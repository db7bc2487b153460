//! Layer compositions on top of the primitive ops.

use crate::error::Result;
use crate::nn::ops::{self, BlockDiag};
use crate::nn::tensor::Tensor;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// Activation applied by a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => ops::relu(x),
            Activation::Identity => x.clone(),
        }
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, values: Array2<f64>) -> Self {
        Self {
            name: name.into(),
            tensor: Tensor::parameter(values),
        }
    }
}

/// Glorot-uniform initialization for a `rows x cols` weight.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 * limit - limit)
}

/// Graph convolution `sigma((I + A) H W^T + B)` with `A` given as a
/// block-diagonal operator (one block per graph in the batch) and the bias
/// broadcast per row.
pub fn gcn_layer(
    h: &Tensor,
    adjacency: &Rc<BlockDiag>,
    weight: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    let mixed = ops::block_mix(adjacency, h)?;
    let propagated = ops::add(h, &mixed)?;
    let out = ops::linear(&propagated, weight, Some(bias))?;
    Ok(activation.apply(&out))
}

/// Message passing on the coarse graph with separate self and neighbor
/// transforms: `Z W1^T + A Z W2^T + b`. The adjacency keeps its weighted
/// entries; no renormalization is applied.
pub fn graphconv_layer(
    z: &Tensor,
    adjacency: &Rc<BlockDiag>,
    w_self: &Tensor,
    w_neigh: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let self_term = ops::linear(z, w_self, Some(bias))?;
    let mixed = ops::block_mix(adjacency, z)?;
    let neigh_term = ops::linear(&mixed, w_neigh, None)?;
    ops::add(&self_term, &neigh_term)
}
