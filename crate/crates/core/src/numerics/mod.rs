//! Minimal dense-tensor math: the layer kinds the acoustic model needs,
//! reverse-mode gradients over a recorded tape, and the Adam optimizer.
//!
//! Forward evaluation with frozen parameters is read-only and safe to run
//! concurrently. Training (backward + adam_step) mutates shared state and is
//! single-writer by contract; nothing here locks internally.

pub mod adam;
pub mod check;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{AdamHyper, AdamOptimizer, AdamState};
pub use check::gradient_check;
pub use graph::{Graph, NodeId};
pub use params::{ParamSet, Parameter};
pub use tensor::{Scalar, Tensor};

/// Epsilon inside the layer-norm square root. Constant rows normalize to
/// zero instead of NaN.
pub const LAYER_NORM_EPS: f64 = 1e-5;
