//! Minimal tensor engine: row-major arrays, a recording graph with
//! reverse-mode differentiation, and the ADAM optimizer.

mod adam;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{set_corrupt_backward, Graph, LstmVars, Var};
pub(crate) use graph::{smooth_l1_scalar, softmax_slice};
pub use tensor::{Param, ParamId, ParamStore, Tensor};

/// Element type of every tensor. 64-bit by default; the `f32` feature
/// narrows it for faster training.
#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;

/// Free-standing softmax on plain values (no graph).
pub fn softmax(x: &[Float]) -> crate::Result<Vec<Float>> {
    if x.is_empty() {
        return Err(crate::Error::dim("softmax: empty input"));
    }
    Ok(softmax_slice(x))
}

#[cfg(test)]
mod tests;
