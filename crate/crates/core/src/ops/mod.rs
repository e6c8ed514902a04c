//! Differentiable operations. Each forward function has a matching
//! `*_backward` that takes the upstream gradient and whatever the forward
//! pass cached, and returns gradients for its inputs and parameters.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod reduce;

pub use activation::{dropout, dropout_backward, relu, relu_backward, softmax, softmax_backward, Mode};
pub use attention::{multi_head_self_attention, multi_head_self_attention_backward, AttentionParams};
pub use conv::{conv2d, conv2d_backward, ConvSpec, Padding};
pub use linear::{linear, linear_backward, Linear};
pub use norm::{layer_norm, layer_norm_backward, LayerNormParams, LAYER_NORM_EPS};
pub use pool::{maxpool2d, maxpool2d_backward};
pub use reduce::{mean_over_axis, mean_over_axis_backward};
