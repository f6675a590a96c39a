//! Dense tensors, reverse-mode differentiation, seeded randomness and AdamW.
//!
//! Everything downstream computes on these types. Training runs in `f32`;
//! the same code instantiated at `f64` backs the oracle checks.

mod kernels;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use kernels::{BLOCKED, RMS_EPS};
pub use optim::{AdamWConfig, OptimizerState};
pub use params::ParamStore;
pub use rng::{stream_id, Rng};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};

use crate::error::Result;

/// Matrix product of `a [m×k]` and `b [k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = kernels::matmul_fwd(a, b, false)?;
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Row-wise softmax of `scores + mask`.
///
/// Mask entries are `0` or [`BLOCKED`]. A row whose every entry is blocked is
/// rejected with [`Error::DegenerateRow`](crate::Error::DegenerateRow).
pub fn masked_softmax<T: Scalar>(scores: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    kernels::masked_softmax_fwd(scores, Some(mask))
}

/// `x / sqrt(mean(x²) + 1e-6) * gain` over the last dimension.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(kernels::rms_norm_fwd(x, gain)?.0)
}
