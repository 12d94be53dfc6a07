//! Differentiable operators. Each returns a new [`Tensor`](super::Tensor) and
//! records its backward rule when gradients are being tracked.

mod conv;
mod elementwise;
pub mod gemm;
mod linear;
mod loss;
mod norm;
mod pool;
mod shape;

pub use conv::{
    add_channel_bias, conv_depthwise_temporal, conv_grouped, conv_temporal, same_padding, Stride3,
};
pub use elementwise::{add, elu, mul, scale, sub, sum};
pub use linear::linear;
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm, BatchNormConfig, BatchNormStats, Mode};
pub use pool::avg_pool_temporal;
pub use shape::{concat, narrow, repeat_interleave, reshape};
