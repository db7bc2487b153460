//! Differentiable tensor core: GCN and GraphConv layers, activations,
//! dropout, pooling, concatenation, softmax cross-entropy, reverse-mode
//! gradients, and Adam with weight decay.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod tensor;

pub use adam::{zero_grads, AdamState};
pub use layers::{gcn_layer, glorot_uniform, graphconv_layer, Activation, Parameter};
pub use ops::{
    add, block_mix, concat_cols, dropout, global_mean_pool, linear, matmul, relu, scale,
    softmax_cross_entropy, softmax_rows, sum_all, BlockDiag,
};
pub use tensor::Tensor;
