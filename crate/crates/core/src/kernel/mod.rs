//! Minimal reverse-mode differentiation kernel.
//!
//! [`Graph`] records eagerly executed operations on [`Tensor`] values and
//! replays them backwards. It is confined to one thread; tensors themselves
//! are plain values and can be sent anywhere.

mod checkpoint;
mod gemm;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gemm::gemm;
pub use gradcheck::{grad_check, grad_check_many, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, SpikeMode, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
