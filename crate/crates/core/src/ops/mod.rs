//! Primitive kernels. Every forward has a matching hand-written backward
//! that maps the upstream gradient onto each differentiable input.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod shape;
mod softmax;

pub use conv::{add_channel_bias, add_channel_bias_backward, conv2d, conv2d_backward, conv_out_len};
pub use elementwise::{
    activation, activation_backward, add, gelu, gelu_backward, relu, relu_backward, scale, Activation,
};
pub use linalg::{matmul, matmul_backward, transpose};
pub use norm::{
    channel_norm, channel_norm_backward, layer_norm, layer_norm_backward, ChannelNormGrads, LayerNormGrads, DEFAULT_EPS,
};
pub use shape::{
    concat, concat_backward, mean_axis, mean_axis_backward, patchify, patchify_backward, reshape, split, sum_axis,
    sum_axis_backward,
};
pub use softmax::{softmax_rows, softmax_rows_backward};
