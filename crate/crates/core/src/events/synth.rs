//! Desk-scale stand-ins for N-MNIST and SHD.
//!
//! `Spatial` samples are Poisson-distributed event clouds around a class-specific
//! blob centre on a small visual grid. `Temporal` samples are audio-like streams
//! where each class drives its own band of channels with a rising or falling
//! rate ramp and a slow frequency sweep.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Event, EventStream, Geometry, Modality};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Spatial,
    Temporal,
}

impl SynthKind {
    pub fn modality(self) -> Modality {
        match self {
            SynthKind::Spatial => Modality::Visual,
            SynthKind::Temporal => Modality::Audio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub classes: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Grid side (spatial) or channel count (temporal).
    pub size: u16,
    pub duration_us: u32,
    /// Mean event count per spatial sample.
    pub mean_events: f64,
    /// Peak per-millisecond firing probability of a temporal channel.
    pub peak_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SynthKind::Spatial,
            classes: 4,
            samples_per_class: 200,
            seed: 0,
            size: 16,
            duration_us: 25_000,
            mean_events: 600.0,
            peak_rate: 0.35,
        }
    }
}

impl SynthConfig {
    pub fn spatial(classes: usize, samples_per_class: usize, seed: u64) -> Self {
        SynthConfig {
            kind: SynthKind::Spatial,
            classes,
            samples_per_class,
            seed,
            ..Default::default()
        }
    }

    pub fn temporal(classes: usize, samples_per_class: usize, seed: u64) -> Self {
        SynthConfig {
            kind: SynthKind::Temporal,
            classes,
            samples_per_class,
            seed,
            size: 64,
            duration_us: 100_000,
            ..Default::default()
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self.kind {
            SynthKind::Spatial => Geometry::visual(self.size, self.size),
            SynthKind::Temporal => Geometry::audio(self.size),
        }
    }

    /// Blob centre for a spatial class, in pixel coordinates.
    pub fn blob_centre(&self, class: usize) -> (f64, f64) {
        let w = f64::from(self.size);
        let angle = 2.0 * PI * class as f64 / self.classes as f64;
        let r = w / 3.0;
        (
            (w - 1.0) / 2.0 + r * angle.cos(),
            (w - 1.0) / 2.0 + r * angle.sin(),
        )
    }

    /// Band centre of a temporal class, in channels.
    pub fn band_centre(&self, class: usize) -> f64 {
        (class as f64 + 0.5) * f64::from(self.size) / self.classes as f64
    }
}

/// Generates `classes * samples_per_class` streams, grouped by class.
///
/// Every sample draws from its own RNG stream derived from the seed, its class
/// and its index, so output is deterministic and independent of call order.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<EventStream>> {
    if cfg.classes < 2 {
        return Err(Error::config("synthetic data needs at least two classes"));
    }
    if cfg.size == 0 || cfg.duration_us == 0 {
        return Err(Error::config("synthetic size and duration must be positive"));
    }
    let mut out = Vec::with_capacity(cfg.classes * cfg.samples_per_class);
    for class in 0..cfg.classes {
        for i in 0..cfg.samples_per_class {
            let label = format!("synth/{:?}/{class}/{i}", cfg.kind);
            let mut rng = rng_for(cfg.seed, &label);
            let events = match cfg.kind {
                SynthKind::Spatial => spatial_sample(cfg, class, &mut rng),
                SynthKind::Temporal => temporal_sample(cfg, class, &mut rng),
            };
            out.push(EventStream::new(
                events,
                class as u16,
                cfg.kind.modality(),
                cfg.geometry(),
            )?);
        }
    }
    Ok(out)
}

fn spatial_sample(cfg: &SynthConfig, class: usize, rng: &mut crate::rng::Rng) -> Vec<Event> {
    let w = f64::from(cfg.size);
    let (cx, cy) = cfg.blob_centre(class);
    let jitter = Normal::new(0.0, w / 20.0).unwrap();
    let (cx, cy) = (cx + jitter.sample(rng), cy + jitter.sample(rng));
    let spread = Normal::new(0.0, w / 10.0).unwrap();
    let n = Poisson::new(cfg.mean_events).unwrap().sample(rng) as usize;
    let max = cfg.size - 1;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y) = if rng.random::<f64>() < 0.9 {
            let px = (cx + spread.sample(rng)).round().clamp(0.0, f64::from(max));
            let py = (cy + spread.sample(rng)).round().clamp(0.0, f64::from(max));
            (px as u16, py as u16)
        } else {
            (rng.random_range(0..cfg.size), rng.random_range(0..cfg.size))
        };
        let t = rng.random_range(0..cfg.duration_us);
        let p = u8::from(rng.random::<bool>());
        events.push(Event::new(t, x, y, p));
    }
    events.sort_by_key(|e| e.t);
    events
}

fn temporal_sample(cfg: &SynthConfig, class: usize, rng: &mut crate::rng::Rng) -> Vec<Event> {
    let channels = f64::from(cfg.size);
    let k = cfg.classes as f64;
    let sigma = channels / (3.0 * k);
    let centre = cfg.band_centre(class) + Normal::new(0.0, sigma / 3.0).unwrap().sample(rng);
    let sweep = channels / (2.0 * k) * if class.is_multiple_of(2) { 1.0 } else { -1.0 };
    let gain = cfg.peak_rate * rng.random_range(0.8..1.2);
    let slot_us = 1000u32;
    let slots = cfg.duration_us.div_ceil(slot_us);
    let background = 0.005;
    let mut events = Vec::new();
    for s in 0..slots {
        let phase = (f64::from(s) + 0.5) / f64::from(slots);
        let mu = centre + (phase - 0.5) * sweep;
        let ramp = if class.is_multiple_of(2) {
            0.25 + 0.75 * phase
        } else {
            1.0 - 0.75 * phase
        };
        let start = s * slot_us;
        let end = (start + slot_us).min(cfg.duration_us);
        for ch in 0..cfg.size {
            let d = f64::from(ch) - mu;
            let p = gain * ramp * (-d * d / (2.0 * sigma * sigma)).exp() + background;
            if rng.random::<f64>() < p {
                events.push(Event::new(rng.random_range(start..end), ch, 0, 0));
            }
        }
    }
    events.sort_by_key(|e| e.t);
    events
}
