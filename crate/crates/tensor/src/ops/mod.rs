//! Differentiable operators.
//!
//! Shape errors are programming errors at this level and panic with a
//! message naming the offending shapes; callers validate user input first.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod sample;
mod shape;

pub use conv::{conv2d, conv2d_output_size, Conv2dOpts};
pub use elementwise::{
    add, add_scalar, clamp, gelu, leaky_relu, mul, relu, scale, sigmoid, sub,
};
pub use linalg::{bmm, gemm, linear};
pub use norm::{layer_norm_last, softmax_last};
pub use reduce::{mean_all, mean_last, sum_all};
pub use sample::{avg_pool2, deform_columns, upsample_bilinear};
pub use shape::{concat, gather_rows, narrow, permute, permutation_indices, reshape, take};
