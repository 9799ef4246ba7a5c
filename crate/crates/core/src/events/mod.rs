//! Neuromorphic event data: containers, parsers, binning and generators.

mod binning;
mod dataset;
mod evt;
mod nmnist;
mod synth;

pub use binning::{bin_events, SpikeTensor};
pub use dataset::{event_files, load_dir, read_stream_file, read_streams, Dataset, Sample};
pub use evt::{read_evt, write_evt, EVT_MAGIC, EVT_VERSION};
pub use nmnist::{encode_nmnist_bin, parse_nmnist_bin, NMNIST_SIZE};
pub use synth::{synth_dataset, SynthConfig, SynthKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensory modality of a sample or model path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Modality::Visual => 0,
            Modality::Audio => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Visual),
            1 => Some(Modality::Audio),
            _ => None,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// One address-event: timestamp in microseconds, position and polarity.
///
/// For audio streams `x` is the cochlear channel and `y` is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Event {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub p: u8,
}

impl Event {
    pub fn new(t: u32, x: u16, y: u16, p: u8) -> Self {
        Event { t, x, y, p }
    }
}

/// Sensor geometry. Visual sensors carry two polarity channels, audio one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub width: u16,
    pub height: u16,
    pub polarities: u8,
}

impl Geometry {
    pub fn visual(width: u16, height: u16) -> Self {
        Geometry {
            width,
            height,
            polarities: 2,
        }
    }

    pub fn audio(channels: u16) -> Self {
        Geometry {
            width: channels,
            height: 1,
            polarities: 1,
        }
    }

    pub fn for_modality(modality: Modality, width: u16, height: u16) -> Self {
        match modality {
            Modality::Visual => Geometry::visual(width, height),
            Modality::Audio => Geometry::audio(width),
        }
    }

    /// The 34x34 two-polarity N-MNIST sensor.
    pub fn nmnist() -> Self {
        Geometry::visual(NMNIST_SIZE, NMNIST_SIZE)
    }

    /// The 700-channel SHD cochlea model.
    pub fn shd() -> Self {
        Geometry::audio(700)
    }
}

/// The events of one sample together with its raw label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    label: u16,
    modality: Modality,
    geometry: Geometry,
}

impl EventStream {
    /// Validates time ordering, coordinates and polarity.
    pub fn new(events: Vec<Event>, label: u16, modality: Modality, geometry: Geometry) -> Result<Self> {
        if geometry != Geometry::for_modality(modality, geometry.width, geometry.height) {
            return Err(Error::Geometry(format!(
                "{geometry:?} is not a {modality} geometry"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x >= geometry.width || e.y >= geometry.height {
                return Err(Error::Geometry(format!(
                    "event {i} at ({}, {}) outside {}x{}",
                    e.x, e.y, geometry.width, geometry.height
                )));
            }
            if e.p > 1 {
                return Err(Error::Malformed(format!("event {i} has polarity {}", e.p)));
            }
        }
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::Malformed(format!(
                "events not time-sorted at index {}",
                i + 1
            )));
        }
        Ok(EventStream {
            events,
            label,
            modality,
            geometry,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn label(&self) -> u16 {
        self.label
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Last timestamp + 1 µs, or `None` for an empty stream.
    pub fn natural_duration(&self) -> Option<u64> {
        self.events.last().map(|e| u64::from(e.t) + 1)
    }
}

/// Maps a raw class into the unified label space (`raw mod num_unified`).
pub fn remap_label(raw: usize, num_unified: usize) -> usize {
    assert!(num_unified >= 1, "unified class count must be positive");
    raw % num_unified
}
