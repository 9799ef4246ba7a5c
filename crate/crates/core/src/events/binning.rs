use super::{EventStream, Modality};
use crate::error::{Error, Result};

/// Dense, time-major binary spike tensor.
///
/// Visual tensors are `(bins, polarities, height, width)`, audio tensors are
/// `(bins, channels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        SpikeTensor {
            shape: shape.to_vec(),
            data: vec![0; shape.iter().product()],
        }
    }

    /// Builds a tensor from raw values; every value must be 0 or 1.
    pub fn from_vec(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("{} values for shape {shape:?}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::shape("spike tensor values must be 0 or 1"));
        }
        Ok(SpikeTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn timesteps(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per timestep.
    pub fn frame_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Reverses the time axis. Used to probe temporal sensitivity.
    pub fn time_reversed(&self) -> Self {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.timesteps()).rev() {
            data.extend_from_slice(&self.data[t * n..(t + 1) * n]);
        }
        SpikeTensor {
            shape: self.shape.clone(),
            data,
        }
    }
}

/// Bins a stream into a binary spike tensor with `bins` time steps.
///
/// An event at time `t` lands in bin `floor(t * bins / duration)`, clamped to
/// the last bin. `duration` defaults to the last timestamp plus one µs.
/// A cell is 1 when at least one event maps to it.
pub fn bin_events(stream: &EventStream, bins: usize, duration: Option<u64>) -> Result<SpikeTensor> {
    if bins == 0 {
        return Err(Error::shape("bin count must be positive"));
    }
    let g = stream.geometry();
    let (w, h) = (usize::from(g.width), usize::from(g.height));
    let mut out = match stream.modality() {
        Modality::Visual => SpikeTensor::zeros(&[bins, usize::from(g.polarities), h, w]),
        Modality::Audio => SpikeTensor::zeros(&[bins, w]),
    };
    let duration = match duration.or_else(|| stream.natural_duration()) {
        Some(0) if !stream.is_empty() => {
            return Err(Error::DegenerateDuration(
                "zero duration with events present".into(),
            ))
        }
        Some(d) => d,
        None => return Ok(out),
    };
    let frame = out.frame_len();
    let last = bins as u64 - 1;
    for e in stream.events() {
        let bin = (u64::from(e.t) * bins as u64 / duration).min(last) as usize;
        let cell = match stream.modality() {
            Modality::Visual => (usize::from(e.p) * h + usize::from(e.y)) * w + usize::from(e.x),
            Modality::Audio => usize::from(e.x),
        };
        out.data[bin * frame + cell] = 1;
    }
    Ok(out)
}
