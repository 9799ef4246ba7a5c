//! Config-driven experiment runner: the ablation grid, joint versus parallel
//! training, engram analysis, and dataset conversion.
//!
//! Every output is a deterministic function of the config. Each grid cell
//! derives its own seed from the global seed and its id, so results do not
//! depend on how many cells run at once.

mod ablation;
mod analysis;
mod tools;

pub use ablation::{
    run_ablation, run_joint, AblationRow, AblationSummary, CellReport, JointReport, JointRow, ModalityResult,
};
pub use analysis::run_engram;
pub use tools::{convert, synth};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engram::ProbeConfig;
use crate::error::{Error, Result};
use crate::events::{load_dir, synth_dataset, Dataset, Modality, SynthConfig};
use crate::memory::{MemoryKind, SCLConfig};
use crate::models::{Arch, HopfieldConfig, ModelDims, ModelSpec};
use crate::rng::derive_seed;
use crate::snn::NeuronConfig;
use crate::train::TrainConfig;

/// Where one modality's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthConfig),
    /// Directories of `.evt` or N-MNIST `.bin` files. Without a `test`
    /// directory the train directory is split.
    Dir {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub visual: Option<DataSource>,
    pub audio: Option<DataSource>,
}

impl DataConfig {
    pub fn get(&self, m: Modality) -> Option<&DataSource> {
        match m {
            Modality::Visual => self.visual.as_ref(),
            Modality::Audio => self.audio.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub memories: Vec<MemoryKind>,
    pub modalities: Vec<Modality>,
    /// Adds one dual-encoder cell with this memory.
    pub dual: Option<MemoryKind>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            memories: MemoryKind::ALL.to_vec(),
            modalities: vec![Modality::Visual, Modality::Audio],
            dual: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimsPreset {
    Full,
    Desk,
}

/// Either a named preset or explicit widths (missing fields take the full
/// size defaults).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimsSetting {
    Preset(DimsPreset),
    Custom(ModelDims),
}

impl DimsSetting {
    pub fn resolve(self) -> ModelDims {
        match self {
            DimsSetting::Preset(DimsPreset::Full) => ModelDims::default(),
            DimsSetting::Preset(DimsPreset::Desk) => ModelDims::desk(),
            DimsSetting::Custom(d) => d,
        }
    }
}

/// Model settings shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelTemplate {
    pub dims: DimsSetting,
    pub neuron: NeuronConfig,
    pub hopfield: HopfieldConfig,
    pub scl: SCLConfig,
    pub init_gain: f64,
}

impl Default for ModelTemplate {
    fn default() -> Self {
        let s = ModelSpec::default();
        ModelTemplate {
            dims: DimsSetting::Preset(DimsPreset::Full),
            neuron: s.neuron,
            hopfield: s.hopfield,
            scl: s.scl,
            init_gain: s.init_gain,
        }
    }
}

impl ModelTemplate {
    pub fn spec(&self, arch: Arch, memory: MemoryKind, num_classes: usize) -> ModelSpec {
        ModelSpec {
            modality: arch,
            memory,
            dims: self.dims.resolve(),
            num_classes,
            neuron: self.neuron,
            hopfield: self.hopfield,
            scl: self.scl,
            init_gain: self.init_gain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngramConfig {
    /// Samples drawn per class from the test split.
    pub per_class: usize,
    pub probe: ProbeConfig,
}

impl Default for EngramConfig {
    fn default() -> Self {
        EngramConfig {
            per_class: 100,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    pub memory: MemoryKind,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            memory: MemoryKind::Hgrn,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_classes() -> usize {
    10
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Top-level JSON config. Only `seed` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Size of the unified label space; raw labels are folded modulo this.
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Held-out fraction when a source has no separate test set.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelTemplate,
    /// `train.seed` is ignored; every cell uses its own derived seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub engram: EngramConfig,
    #[serde(default)]
    pub joint: JointConfig,
    /// Cap on cells run at once. `SNN_THREADS` takes precedence.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// One trainable unit of the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub id: String,
    pub memory: MemoryKind,
    pub arch: Arch,
    pub seed: u64,
}

impl Cell {
    fn new(id: String, memory: MemoryKind, arch: Arch, seed: u64) -> Self {
        Cell {
            id,
            memory,
            arch,
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json(&text)
    }

    /// Grid cells in report order: memory-major, then the dual cell.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &k in &self.grid.memories {
            for &m in &self.grid.modalities {
                let id = format!("{}-{}", k.model_id(), m);
                let seed = derive_seed(self.seed, &id);
                out.push(Cell::new(id, k, Arch::single(m), seed));
            }
        }
        if let Some(k) = self.grid.dual {
            let id = format!("{}-dual", k.model_id());
            let seed = derive_seed(self.seed, &id);
            out.push(Cell::new(id, k, Arch::Dual, seed));
        }
        out
    }

    pub fn spec(&self, cell: &Cell) -> ModelSpec {
        self.model.spec(cell.arch, cell.memory, self.num_classes)
    }

    fn validate_common(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config(format!(
                "test_fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be positive"));
        }
        let t = &self.train;
        t.optim.validate()?;
        if t.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if let Some(c) = t.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm must be positive"));
            }
        }
        for m in [Modality::Visual, Modality::Audio] {
            if let Some(DataSource::Synth(s)) = self.data.get(m) {
                if s.kind.modality() != m {
                    return Err(Error::config(format!(
                        "{:?} synth data configured for {m}",
                        s.kind
                    )));
                }
                if s.classes < self.num_classes {
                    return Err(Error::config(format!(
                        "{m} synth data has {} classes but num_classes is {}",
                        s.classes, self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_cells(&self, cells: &[Cell]) -> Result<()> {
        for cell in cells {
            let spec = self.spec(cell);
            spec.validate()?;
            if spec.memory.uses_scl() && self.train.batch_size < 2 {
                return Err(Error::config(format!(
                    "{}: contrastive loss needs batch_size >= 2",
                    cell.id
                )));
            }
            for &m in cell.arch.modalities() {
                if self.data.get(m).is_none() {
                    return Err(Error::config(format!("{}: no {m} data configured", cell.id)));
                }
            }
        }
        Ok(())
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        let cells = self.cells();
        if cells.is_empty() {
            return Err(Error::config("the grid has no cells"));
        }
        self.validate_cells(&cells)
    }

    fn modalities_needed(&self, cells: &[Cell]) -> Vec<Modality> {
        [Modality::Visual, Modality::Audio]
            .into_iter()
            .filter(|m| cells.iter().any(|c| c.arch.modalities().contains(m)))
            .collect()
    }
}

/// Train and test sets of one modality.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedData {
    pub visual: Option<Split>,
    pub audio: Option<Split>,
}

impl LoadedData {
    pub fn get(&self, m: Modality) -> Result<&Split> {
        match m {
            Modality::Visual => self.visual.as_ref(),
            Modality::Audio => self.audio.as_ref(),
        }
        .ok_or_else(|| Error::config(format!("no {m} data loaded")))
    }
}

fn check_path(p: &Path) -> Result<()> {
    fs::metadata(p).map(|_| ()).map_err(|e| Error::io_at(p, e))
}

fn check_shape(cfg: &ExperimentConfig, m: Modality, d: &Dataset) -> Result<()> {
    let dims = cfg.model.dims.resolve();
    let want = dims.frame_shape(m);
    match d.input_shape() {
        Some(shape) if shape[1..] == want[..] => Ok(()),
        Some(shape) => Err(Error::config(format!(
            "{m} frames are {:?} but the model expects {want:?}",
            &shape[1..]
        ))),
        None => Err(Error::config(format!("{m} dataset is empty"))),
    }
}

/// Resolves and bins the data for `modalities`. Every configured path is
/// checked before anything is read.
pub fn load_data(cfg: &ExperimentConfig, modalities: &[Modality]) -> Result<LoadedData> {
    for &m in modalities {
        match cfg.data.get(m) {
            Some(DataSource::Dir { train, test }) => {
                check_path(train)?;
                if let Some(t) = test {
                    check_path(t)?;
                }
            }
            Some(DataSource::Synth(_)) => {}
            None => return Err(Error::config(format!("no {m} data configured"))),
        }
    }
    let dims = cfg.model.dims.resolve();
    let mut out = LoadedData::default();
    for &m in modalities {
        let bins = dims.bins(m);
        let split_seed = derive_seed(cfg.seed, &format!("split/{m}"));
        let split = match cfg.data.get(m) {
            Some(DataSource::Synth(s)) => {
                let all = Dataset::from_streams(&synth_dataset(s)?, bins, cfg.num_classes)?;
                let (train, test) = all.split(cfg.test_fraction, split_seed)?;
                Split { train, test }
            }
            Some(DataSource::Dir { train, test: Some(t) }) => Split {
                train: load_dir(train, bins, cfg.num_classes)?,
                test: load_dir(t, bins, cfg.num_classes)?,
            },
            Some(DataSource::Dir { train, test: None }) => {
                let all = load_dir(train, bins, cfg.num_classes)?;
                let (train, test) = all.split(cfg.test_fraction, split_seed)?;
                Split { train, test }
            }
            None => unreachable!("checked above"),
        };
        for d in [&split.train, &split.test] {
            if d.modality != m {
                return Err(Error::config(format!(
                    "{m} source holds {} recordings",
                    d.modality
                )));
            }
            check_shape(cfg, m, d)?;
        }
        match m {
            Modality::Visual => out.visual = Some(split),
            Modality::Audio => out.audio = Some(split),
        }
    }
    Ok(out)
}

/// Thread pool sized by `SNN_THREADS`, then `threads`, then the core count.
fn thread_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("SNN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                return Err(Error::config(format!(
                    "SNN_THREADS must be a positive integer, got {v:?}"
                )))
            }
        },
        Err(_) => cfg.threads.unwrap_or(0),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_default()
}

#[cfg(test)]
mod tests;
