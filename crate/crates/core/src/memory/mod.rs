//! Memory mechanisms applied at the feature layer: a supervised contrastive
//! loss, a modern Hopfield retrieval layer and a gated recurrent cell.

mod hgrn;
mod hopfield;
mod scl;

pub use hgrn::{hgrn_step, hgrn_step_graph, HGRNCell, HgrnVars};
pub use hopfield::{
    hopfield_energy, hopfield_retrieve, hopfield_retrieve_graph, retrieval_weights, HopfieldEnergy,
    HopfieldMemory,
};
pub use scl::{scl_loss, scl_loss_graph, SCLConfig};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Which memory block sits between the feature layer and the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    None,
    Scl,
    Hopfield,
    Hgrn,
    Hybrid,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 5] = [
        MemoryKind::None,
        MemoryKind::Scl,
        MemoryKind::Hopfield,
        MemoryKind::Hgrn,
        MemoryKind::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::None => "none",
            MemoryKind::Scl => "scl",
            MemoryKind::Hopfield => "hopfield",
            MemoryKind::Hgrn => "hgrn",
            MemoryKind::Hybrid => "hybrid",
        }
    }

    /// Model label used in reports (M1..M5).
    pub fn model_id(self) -> &'static str {
        match self {
            MemoryKind::None => "M1",
            MemoryKind::Scl => "M2",
            MemoryKind::Hopfield => "M3",
            MemoryKind::Hgrn => "M4",
            MemoryKind::Hybrid => "M5",
        }
    }

    pub fn uses_scl(self) -> bool {
        matches!(self, MemoryKind::Scl | MemoryKind::Hybrid)
    }

    pub fn uses_hopfield(self) -> bool {
        matches!(self, MemoryKind::Hopfield | MemoryKind::Hybrid)
    }

    pub fn uses_hgrn(self) -> bool {
        matches!(self, MemoryKind::Hgrn | MemoryKind::Hybrid)
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for MemoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MemoryKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown memory kind `{s}`")))
    }
}
