//! Engram analysis on rate-encoded feature-layer activity: clustering quality,
//! cross-modal alignment, a transfer probe and effective dimensionality.

mod metrics;
mod probe;

pub use metrics::{
    covariance_spectrum, cross_modal_alignment, davies_bouldin, effective_dim, silhouette, Alignment, Metric,
};
pub use probe::{zero_shot_transfer, Probe, ProbeConfig};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::events::{Dataset, Modality, SpikeTensor};
use crate::kernel::Tensor;
use crate::models::Model;
use crate::rng::rng_for;

/// One row of features per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `[samples, dim]`.
    pub rows: Tensor,
    pub labels: Vec<usize>,
    pub modality: Modality,
    pub num_classes: usize,
    /// Set when some class had fewer samples than requested.
    pub short_classes: bool,
}

impl FeatureMatrix {
    pub fn new(rows: Tensor, labels: Vec<usize>, modality: Modality, num_classes: usize) -> Result<Self> {
        if rows.rank() != 2 || rows.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{:?} feature rows for {} labels",
                rows.shape(),
                labels.len()
            )));
        }
        Ok(FeatureMatrix {
            rows,
            labels,
            modality,
            num_classes,
            short_classes: false,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    /// CSV with a header of neuron indices followed by `label,modality`.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|i| i.to_string()).collect();
        writeln!(w, "{},label,modality", header.join(","))?;
        for i in 0..self.len() {
            let vals: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{}", vals.join(","), self.labels[i], self.modality)?;
        }
        Ok(())
    }
}

const FEATURE_BATCH: usize = 64;

/// Balanced per-class sample of feature-layer firing rates. Each class
/// contributes `per_class` samples chosen by a seeded shuffle, or all of its
/// samples (setting `short_classes`) if it has fewer.
pub fn rate_features(model: &Model, data: &Dataset, per_class: usize, seed: u64) -> Result<FeatureMatrix> {
    let n = model.spec.num_classes;
    let mut chosen = Vec::new();
    let mut short = false;
    for c in 0..n {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].label == c).collect();
        if idx.is_empty() {
            return Err(Error::MissingClass(c));
        }
        idx.shuffle(&mut rng_for(seed, &format!("engram/{}/{c}", data.modality)));
        if idx.len() < per_class {
            short = true;
        }
        idx.truncate(per_class);
        chosen.extend(idx);
    }
    let mut rows = Vec::with_capacity(chosen.len() * model.spec.dims.feature);
    for chunk in chosen.chunks(FEATURE_BATCH) {
        let inputs: Vec<&SpikeTensor> = chunk.iter().map(|&i| &data.samples[i].input).collect();
        let out = model.forward_batch(data.modality, &inputs)?;
        rows.extend_from_slice(out.rates().data());
    }
    let labels: Vec<usize> = chosen.iter().map(|&i| data.samples[i].label).collect();
    let rows = Tensor::new(&[labels.len(), model.spec.dims.feature], rows)?;
    let mut f = FeatureMatrix::new(rows, labels, data.modality, n)?;
    f.short_classes = short;
    Ok(f)
}

/// Clustering and dimensionality metrics of one feature matrix, plus optional
/// cross-modal results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngramReport {
    pub model: String,
    pub modality: Modality,
    pub samples: usize,
    pub short_classes: bool,
    pub silhouette: f64,
    pub silhouette_degenerate: bool,
    /// `None` when some centroids coincide (infinite index).
    pub davies_bouldin: Option<f64>,
    pub davies_bouldin_degenerate: bool,
    pub effective_dim_fraction: f64,
    pub effective_dim_degenerate: bool,
    pub alignment: Option<Alignment>,
    /// Probe trained on this modality, tested on the other.
    pub transfer_accuracy: Option<f64>,
}

pub const VARIANCE_THRESHOLD: f64 = 0.95;

pub fn analyze(model: &str, f: &FeatureMatrix) -> Result<EngramReport> {
    let sil = silhouette(f)?;
    let db = davies_bouldin(f)?;
    let eff = effective_dim(f, VARIANCE_THRESHOLD)?;
    Ok(EngramReport {
        model: model.to_string(),
        modality: f.modality,
        samples: f.len(),
        short_classes: f.short_classes,
        silhouette: sil.value,
        silhouette_degenerate: sil.degenerate,
        davies_bouldin: db.value.is_finite().then_some(db.value),
        davies_bouldin_degenerate: db.degenerate,
        effective_dim_fraction: eff.value,
        effective_dim_degenerate: eff.degenerate,
        alignment: None,
        transfer_accuracy: None,
    })
}
