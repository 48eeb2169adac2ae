//! Minimal dense-tensor arithmetic with reverse-mode autodiff and Adam,
//! sized for conv/deconv/GRU networks on small grids.
//!
//! The tape is define-by-run: every forward pass records nodes, `backward`
//! walks them once in reverse. Gradients accumulate into [`Param`] storage
//! and must be zeroed explicitly; [`adam_step`] zeroes after stepping.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper};
pub use checkpoint::CheckpointError;
pub use param::{Param, ParamData};
pub use tape::{NodeId, Tape};
pub use tensor::{dot, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value rejected at tensor construction")]
    NonFinite,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
