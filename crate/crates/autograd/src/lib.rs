//! A small reverse-mode automatic differentiation tape over `f64` tensors.
//!
//! Only the ops the super-resolution generator, the frozen semantic encoder
//! and the feature discriminator need are provided. Everything runs in `f64`
//! on one thread, which keeps training bit-reproducible and lets gradient
//! tests use tight finite-difference tolerances.

pub mod check;
pub mod ops;
pub mod optim;
pub mod tape;

pub use ops::{
    concat_channels, conv2d, cosine_rows, global_avg_pool, linear, log_sigmoid, mean_rows,
    resize_nearest, sigmoid, spectral_normalize, sum_vars,
};
pub use optim::{Adam, AdamConfig};
pub use tape::{BackwardCtx, Grads, Tape, Tensor, Var};
