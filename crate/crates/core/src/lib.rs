//! End-to-end scene text spotting.

// `!(x >= 0.0)` deliberately rejects NaN; `as Float` casts are no-ops only
// in the default f64 build.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::unnecessary_cast)]

pub mod backbone;
pub mod checkpoint;
pub mod error;
pub mod evalproto;
pub mod geometry;
pub mod image;
pub mod kv;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rfe;
pub mod selfcheck;
pub mod synthdata;
pub mod tensor;
pub mod tdn;
pub mod tpn;
pub mod training;
pub mod trn;

pub use error::{CheckpointError, Error, Result};
