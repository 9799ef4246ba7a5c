use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    bin_events, parse_nmnist_bin, read_evt, remap_label, EventStream, Geometry, Modality, SpikeTensor,
};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// One binned sample with its unified label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: SpikeTensor,
    pub label: usize,
}

/// A binned, labelled dataset of a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modality: Modality,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Bins every stream and maps raw labels into `num_unified` classes.
    pub fn from_streams(streams: &[EventStream], bins: usize, num_unified: usize) -> Result<Self> {
        let first = streams
            .first()
            .ok_or_else(|| Error::config("cannot build a dataset from zero streams"))?;
        let modality = first.modality();
        let geometry = first.geometry();
        if let Some(bad) = streams
            .iter()
            .find(|s| s.modality() != modality || s.geometry() != geometry)
        {
            return Err(Error::config(format!(
                "mixed dataset: {:?}/{:?} vs {modality:?}/{geometry:?}",
                bad.modality(),
                bad.geometry()
            )));
        }
        let samples = streams
            .par_iter()
            .map(|s| {
                Ok(Sample {
                    input: bin_events(s, bins, None)?,
                    label: remap_label(usize::from(s.label()), num_unified),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            modality,
            num_classes: num_unified,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shape of one sample's spike tensor.
    pub fn input_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.input.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Seeded per-class split into `(train, test)`. Each class sends
    /// `round(test_fraction * count)` samples to the test side.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].label == c).collect();
            idx.shuffle(&mut rng_for(seed, &format!("split/{}/{c}", self.modality)));
            let k = (test_fraction * idx.len() as f64).round() as usize;
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            modality: self.modality,
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io_at(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Event files (`.evt` and N-MNIST `.bin`) below `dir`, in path order.
pub fn event_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("evt" | "bin")));
    Ok(files)
}

/// Reads one `.evt` container or N-MNIST `.bin` recording. N-MNIST files take
/// their raw label from the name of their parent directory.
pub fn read_stream_file(path: &Path) -> Result<EventStream> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("evt") => fs::read(path)
            .map_err(|e| Error::io_at(path, e))
            .and_then(|b| read_evt(&b)),
        Some("bin") => read_nmnist_file(path),
        _ => Err(Error::Malformed(format!(
            "{}: expected a .evt or .bin file",
            path.display()
        ))),
    }
}

/// Reads every event file below `dir`, in path order.
pub fn read_streams(dir: &Path) -> Result<Vec<EventStream>> {
    event_files(dir)?
        .par_iter()
        .map(|p| read_stream_file(p))
        .collect()
}

fn read_nmnist_file(path: &Path) -> Result<EventStream> {
    let label = path
        .parent()
        .and_then(|d| d.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse::<u16>().ok())
        .ok_or_else(|| {
            Error::Malformed(format!(
                "{}: N-MNIST files must live in a directory named after their digit",
                path.display()
            ))
        })?;
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    parse_nmnist_bin(&bytes, Geometry::nmnist(), label)
}

/// Loads and bins a directory of event files.
pub fn load_dir(dir: &Path, bins: usize, num_unified: usize) -> Result<Dataset> {
    let streams = read_streams(dir)?;
    if streams.is_empty() {
        return Err(Error::config(format!("no event files under {}", dir.display())));
    }
    Dataset::from_streams(&streams, bins, num_unified)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{synth_dataset, write_evt, SynthConfig};

    #[test]
    fn split_is_stratified_and_disjoint() {
        let streams = synth_dataset(&SynthConfig::spatial(4, 10, 3)).unwrap();
        let ds = Dataset::from_streams(&streams, 5, 4).unwrap();
        let (train, test) = ds.split(0.2, 1).unwrap();
        assert_eq!(train.class_counts(), vec![8; 4]);
        assert_eq!(test.class_counts(), vec![2; 4]);
        let (train2, _) = ds.split(0.2, 1).unwrap();
        assert_eq!(train.samples, train2.samples);
        assert!(ds.split(1.0, 1).is_err());
    }

    #[test]
    fn loads_evt_and_nmnist_trees() {
        let dir = tempfile::tempdir().unwrap();
        let streams = synth_dataset(&SynthConfig::temporal(2, 2, 1)).unwrap();
        for (i, s) in streams.iter().enumerate() {
            fs::write(dir.path().join(format!("{i}.evt")), write_evt(s)).unwrap();
        }
        let ds = load_dir(dir.path(), 10, 10).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.modality, Modality::Audio);
        assert_eq!(ds.input_shape(), Some(&[10usize, 64][..]));

        let nm = tempfile::tempdir().unwrap();
        let digit = nm.path().join("7");
        fs::create_dir(&digit).unwrap();
        fs::write(digit.join("00001.bin"), [0x05, 0x0A, 0x80, 0x00, 0x01]).unwrap();
        let ds = load_dir(nm.path(), 25, 10).unwrap();
        assert_eq!(ds.samples[0].label, 7);
        assert_eq!(ds.input_shape(), Some(&[25usize, 2, 34, 34][..]));
    }

    #[test]
    fn shd_labels_fold_to_ten() {
        let s = EventStream::new(vec![], 17, Modality::Audio, Geometry::shd()).unwrap();
        let ds = Dataset::from_streams(&[s], 100, 10).unwrap();
        assert_eq!(ds.samples[0].label, 7);
    }

    #[test]
    fn missing_dir_is_io_error() {
        let err = load_dir(Path::new("/definitely/not/here"), 25, 10).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
