//! Differentiable primitives with explicit forward and backward rules.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_reference, conv_output_size, ConvGrads, ConvParams};
pub use dense::{dense, dense_backward, DenseGrads};
pub use pool::{maxpool2, maxpool2_argmax, maxpool2_backward};
