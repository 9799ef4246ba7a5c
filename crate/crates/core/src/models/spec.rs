use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::events::Modality;
use crate::memory::{MemoryKind, SCLConfig};
use crate::snn::NeuronConfig;

/// Which encoders a model has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Visual,
    Audio,
    /// Both encoders feeding one shared memory block and classifier.
    Dual,
}

impl Arch {
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            Arch::Visual => &[Modality::Visual],
            Arch::Audio => &[Modality::Audio],
            Arch::Dual => &[Modality::Visual, Modality::Audio],
        }
    }

    pub fn single(m: Modality) -> Self {
        match m {
            Modality::Visual => Arch::Visual,
            Modality::Audio => Arch::Audio,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Visual => "visual",
            Arch::Audio => "audio",
            Arch::Dual => "dual",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Layer widths and input geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    /// `[polarities, height, width]` of one visual frame.
    pub visual_input: [usize; 3],
    pub visual_bins: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub kernel: usize,
    pub audio_input: usize,
    pub audio_bins: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Width of the feature layer where the memory block sits.
    pub feature: usize,
    pub patterns: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            visual_input: [2, 34, 34],
            visual_bins: 25,
            conv1: 64,
            conv2: 128,
            kernel: 3,
            audio_input: 700,
            audio_bins: 100,
            hidden1: 1024,
            hidden2: 1024,
            feature: 512,
            patterns: 256,
        }
    }
}

impl ModelDims {
    /// Small widths matching the synthetic datasets' default geometry.
    pub fn desk() -> Self {
        ModelDims {
            visual_input: [2, 16, 16],
            visual_bins: 25,
            conv1: 8,
            conv2: 16,
            kernel: 3,
            audio_input: 64,
            audio_bins: 100,
            hidden1: 128,
            hidden2: 128,
            feature: 64,
            patterns: 32,
        }
    }

    /// Spatial size after the two 2x2 pools.
    pub fn pooled_hw(&self) -> (usize, usize) {
        (self.visual_input[1] / 4, self.visual_input[2] / 4)
    }

    /// Input width of the visual FC layer.
    pub fn visual_flat(&self) -> usize {
        let (h, w) = self.pooled_hw();
        self.conv2 * h * w
    }

    pub fn bins(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.visual_bins,
            Modality::Audio => self.audio_bins,
        }
    }

    /// Per-timestep input shape of one sample.
    pub fn frame_shape(&self, m: Modality) -> Vec<usize> {
        match m {
            Modality::Visual => self.visual_input.to_vec(),
            Modality::Audio => vec![self.audio_input],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopfieldConfig {
    /// Inverse temperature; `None` means `1/sqrt(feature)`.
    pub beta: Option<f64>,
    pub iters: usize,
    /// Std of the initial patterns.
    pub init_std: f64,
}

impl Default for HopfieldConfig {
    fn default() -> Self {
        HopfieldConfig {
            beta: None,
            iters: 1,
            init_std: 1.0,
        }
    }
}

/// Declarative description of one model variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub modality: Arch,
    pub memory: MemoryKind,
    pub dims: ModelDims,
    pub num_classes: usize,
    pub neuron: NeuronConfig,
    pub hopfield: HopfieldConfig,
    pub scl: SCLConfig,
    /// Spiking-layer weights start as `U(-g/sqrt(fan_in), g/sqrt(fan_in))`.
    pub init_gain: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            modality: Arch::Visual,
            memory: MemoryKind::None,
            dims: ModelDims::default(),
            num_classes: 10,
            neuron: NeuronConfig::default(),
            hopfield: HopfieldConfig::default(),
            scl: SCLConfig::default(),
            init_gain: 8.0,
        }
    }
}

impl ModelSpec {
    pub fn new(modality: Arch, memory: MemoryKind) -> Self {
        ModelSpec {
            modality,
            memory,
            ..Default::default()
        }
    }

    pub fn with_dims(mut self, dims: ModelDims) -> Self {
        self.dims = dims;
        self
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.num_classes = n;
        self
    }

    pub fn beta(&self) -> f64 {
        self.hopfield
            .beta
            .unwrap_or(1.0 / (self.dims.feature as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let widths = [
            d.visual_input[0],
            d.conv1,
            d.conv2,
            d.kernel,
            d.audio_input,
            d.hidden1,
            d.hidden2,
            d.feature,
            d.patterns,
            d.visual_bins,
            d.audio_bins,
        ];
        if widths.contains(&0) {
            return Err(Error::config(format!("model dims must be positive: {d:?}")));
        }
        if d.kernel.is_multiple_of(2) {
            return Err(Error::config("conv kernel must be odd to preserve size"));
        }
        if d.visual_input[1] < 4 || d.visual_input[2] < 4 {
            return Err(Error::config(format!(
                "visual input {:?} too small for two 2x2 pools",
                d.visual_input
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.modality == Arch::Dual && !self.memory.uses_hgrn() {
            return Err(Error::config(format!(
                "dual model needs a recurrent shared trunk, got memory `{}`",
                self.memory
            )));
        }
        if !(self.beta() > 0.0 && self.beta().is_finite()) {
            return Err(Error::config("hopfield beta must be > 0"));
        }
        if self.hopfield.iters == 0 {
            return Err(Error::config("hopfield iters must be >= 1"));
        }
        if !(self.hopfield.init_std > 0.0 && self.hopfield.init_std.is_finite()) {
            return Err(Error::config("hopfield init_std must be > 0"));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(Error::config("init_gain must be > 0"));
        }
        self.neuron.lif.validate()?;
        self.scl.validate()
    }
}
