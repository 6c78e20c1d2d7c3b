//! HE-friendly conversion, packing-aligned block pruning and simulated batch-packed
//! private inference for small neural networks.
//!
//! Everything is generic over the scalar type; the aliases below fix it to `f64` or
//! `f32` for callers that do not care.

pub mod arch;
pub mod datasets;
pub mod error;
pub mod hesim;
pub mod nncore;
pub mod pi;
pub mod prune;
pub mod scalar;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model64 = nncore::Model<f64>;
pub type Model32 = nncore::Model<f32>;
pub type Dataset64 = datasets::Dataset<f64>;
pub type Dataset32 = datasets::Dataset<f32>;
pub type PackedVec64 = hesim::PackedVec<f64>;
pub type PackedVec32 = hesim::PackedVec<f32>;
pub type PiProgram64 = pi::PiProgram<f64>;
pub type PiProgram32 = pi::PiProgram<f32>;
