//! Layer-wise network engine.
//!
//! Models are evaluated segment by segment so that any protocol can cut the
//! stack at a layer boundary and exchange activations and gradients as plain
//! [`Tensor`](crate::Tensor) values. Forward and backward of a full model are
//! exactly the composition of the forward and backward of its segments.

mod loss;
mod profile;
mod segment;

pub use loss::{argmax_rows, loss_grad};
pub use profile::{bytes_of, LayerKind, LayerSpec, ModelProfile, DEFAULT_CYCLES_PER_MAC};
pub use segment::{ActivationCache, ParamGrads, SegmentState};
