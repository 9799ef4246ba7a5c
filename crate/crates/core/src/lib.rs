//! Memory-augmented spiking neural networks.
//!
//! `memsnn` provides leaky integrate-and-fire (LIF) networks trained with
//! surrogate gradients, three memory mechanisms operating on the feature layer
//! (supervised contrastive loss, a modern Hopfield retrieval layer and a gated
//! recurrent HGRN cell), and the tooling needed to run a cross-modal ablation
//! over visual (N-MNIST style) and auditory (SHD style) event data:
//!
//! - [`events`]: event containers, the N-MNIST binary parser, the EVT format,
//!   binning into spike tensors and synthetic generators.
//! - [`kernel`]: a small reverse-mode differentiation tape with the tensor
//!   primitives the models need, a finite-difference gradient checker and the
//!   parameter checkpoint format.
//! - [`snn`]: LIF dynamics, surrogate spikes, sequence unrolling and activity
//!   metering.
//! - [`memory`]: contrastive loss, Hopfield retrieval/energies, HGRN cell.
//! - [`models`]: the M1–M5 model zoo and the dual-input joint model.
//! - [`train`]: AdamW, single-modality and alternating joint training, evaluation.
//! - [`engram`]: rate features, clustering metrics, alignment, transfer probe,
//!   effective dimensionality.
//! - [`energy`]: MAC vs synaptic-operation accounting.
//! - [`experiment`]: config-driven ablation, joint and engram runners.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod engram;
pub mod error;
pub mod events;
pub mod experiment;
pub mod kernel;
pub mod memory;
pub mod models;
pub mod rng;
pub mod snn;
pub mod train;

pub use error::{Error, Result};
