//! Model zoo: visual and audio spiking encoders with one of five memory
//! blocks (M1 none, M2 contrastive loss, M3 Hopfield, M4 HGRN, M5 HGRN then
//! Hopfield with contrastive loss), plus a dual-encoder model sharing the
//! recurrent trunk and classifier.

mod model;
mod spec;

pub use model::{
    argmax, build_model, synaptic_layers, BatchOutput, BatchTrace, ForwardOutput, Model, SynapticLayer,
};
pub use spec::{Arch, HopfieldConfig, ModelDims, ModelSpec};

#[cfg(test)]
mod tests;
