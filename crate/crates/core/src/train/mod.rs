//! Optimizer, single-modality and alternating joint training, and evaluation.

mod optim;

pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, OptimState};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::events::{Dataset, Modality, SpikeTensor};
use crate::kernel::{Graph, Tensor, Var};
use crate::memory::scl_loss_graph;
use crate::models::{BatchTrace, Model};
use crate::rng::rng_for;
use crate::snn::{sparsity, SpikeActivity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Evaluate on the test split every this many epochs (0 = only at the end).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            seed: 0,
            optim: AdamWConfig::default(),
            clip_norm: Some(5.0),
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if model.spec.memory.uses_scl() && self.batch_size < 2 {
            return Err(Error::config("contrastive loss needs batch_size >= 2"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm must be positive"));
            }
        }
        Ok(())
    }
}

/// Aggregates over one pass through a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    pub accuracy: f64,
    /// Feature-stack sparsity over the pass, `1 - spikes / neuron steps`.
    pub sparsity: f64,
    pub samples: usize,
    pub updates: usize,
}

#[derive(Debug, Default)]
struct Accum {
    loss: f64,
    correct: usize,
    samples: usize,
    updates: usize,
    activity: SpikeActivity,
}

impl Accum {
    fn add(&mut self, s: StepStats) {
        self.loss += s.loss * s.samples as f64;
        self.correct += s.correct;
        self.samples += s.samples;
        self.updates += 1;
        self.activity.merge(&s.activity);
    }

    fn finish(self) -> Result<EpochMetrics> {
        let n = self.samples.max(1) as f64;
        Ok(EpochMetrics {
            loss: self.loss / n,
            accuracy: self.correct as f64 / n,
            sparsity: sparsity(&self.activity)?,
            samples: self.samples,
            updates: self.updates,
        })
    }
}

/// Statistics of one optimizer update.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
    pub grad_norm: f64,
    pub activity: SpikeActivity,
}

/// Records the training objective of one batch on `g`, with parameters taken
/// from `bound`.
///
/// The loss is cross-entropy on time-averaged logits, plus `weight * SCL` on
/// the time-averaged memory output when the model uses the contrastive loss
/// and the batch has at least two samples.
pub fn loss_graph(
    model: &Model,
    g: &mut Graph,
    bound: &[Var],
    modality: Modality,
    inputs: &[&SpikeTensor],
    labels: &[usize],
) -> Result<(Var, BatchTrace)> {
    let trace = model.forward_graph(g, bound, modality, inputs)?;
    let mut loss = g.cross_entropy(trace.logits, labels)?;
    if model.spec.memory.uses_scl() && labels.len() >= 2 {
        let scl = scl_loss_graph(g, trace.embedding, labels, &model.spec.scl)?;
        let weighted = g.scale(scl, model.spec.scl.weight);
        loss = g.add(loss, weighted)?;
    }
    Ok((loss, trace))
}

/// One forward/backward/update on a batch of `modality` samples, minimizing
/// [`loss_graph`].
pub fn train_step(
    model: &mut Model,
    modality: Modality,
    batch: &[(&SpikeTensor, usize)],
    cfg: &TrainConfig,
    st: &mut OptimState,
) -> Result<StepStats> {
    let inputs: Vec<&SpikeTensor> = batch.iter().map(|b| b.0).collect();
    let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let (loss, trace) = loss_graph(model, &mut g, &bound, modality, &inputs, &labels)?;
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("loss became {loss_value}")));
    }
    let logits = g.value(trace.logits);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(b, &y)| crate::models::argmax(logits.row(b)) == y)
        .count();
    let mut grads_by_var = g.backward(loss)?;
    let mut grads: Vec<Option<Tensor>> = bound.iter().map(|&v| grads_by_var.take(v)).collect();
    let grad_norm = match cfg.clip_norm {
        Some(c) => clip_grad_norm(&mut grads, c),
        None => clip_grad_norm(&mut grads, f64::INFINITY),
    };
    adamw_step(&mut model.params, &grads, st, &cfg.optim)?;
    Ok(StepStats {
        loss: loss_value,
        correct,
        samples: batch.len(),
        grad_norm,
        activity: trace.activity,
    })
}

/// Sample order for `cycle` of `epoch` on one stream. Cycle 0 is the order a
/// plain single-modality epoch uses.
fn shuffled(n: usize, seed: u64, modality: Modality, epoch: usize, cycle: usize) -> Vec<usize> {
    let label = if cycle == 0 {
        format!("shuffle/{modality}/{epoch}")
    } else {
        format!("shuffle/{modality}/{epoch}/{cycle}")
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &label));
    idx
}

fn batch_of<'a>(data: &'a Dataset, idx: &[usize]) -> Vec<(&'a SpikeTensor, usize)> {
    idx.iter()
        .map(|&i| (&data.samples[i].input, data.samples[i].label))
        .collect()
}

/// One seeded pass over `data` in mini-batches.
pub fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    st: &mut OptimState,
    epoch: usize,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    cfg.validate(model)?;
    let order = shuffled(data.len(), cfg.seed, data.modality, epoch, 0);
    let mut acc = Accum::default();
    for chunk in order.chunks(cfg.batch_size) {
        let batch = batch_of(data, chunk);
        acc.add(train_step(model, data.modality, &batch, cfg, st)?);
    }
    acc.finish()
}

/// Endless reshuffled batches over one stream.
struct Recycler<'a> {
    data: &'a Dataset,
    seed: u64,
    epoch: usize,
    cycle: usize,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl<'a> Recycler<'a> {
    fn new(data: &'a Dataset, cfg: &TrainConfig, epoch: usize) -> Self {
        Recycler {
            data,
            seed: cfg.seed,
            epoch,
            cycle: 0,
            order: shuffled(data.len(), cfg.seed, data.modality, epoch, 0),
            pos: 0,
            batch: cfg.batch_size,
        }
    }

    fn steps_per_pass(&self) -> usize {
        self.data.len().div_ceil(self.batch)
    }

    fn next_batch(&mut self) -> Vec<(&'a SpikeTensor, usize)> {
        if self.pos >= self.order.len() {
            self.cycle += 1;
            self.order = shuffled(
                self.data.len(),
                self.seed,
                self.data.modality,
                self.epoch,
                self.cycle,
            );
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = batch_of(self.data, &self.order[self.pos..end]);
        self.pos = end;
        out
    }
}

/// Metrics of one joint step: one update per modality, visual first.
#[derive(Debug, Clone)]
pub struct JointStepStats {
    pub visual: StepStats,
    pub audio: StepStats,
}

pub fn joint_train_step(
    model: &mut Model,
    visual: &[(&SpikeTensor, usize)],
    audio: &[(&SpikeTensor, usize)],
    cfg: &TrainConfig,
    st: &mut OptimState,
) -> Result<JointStepStats> {
    if visual.is_empty() || audio.is_empty() {
        return Err(Error::config("joint step needs a visual and an audio batch"));
    }
    let v = train_step(model, Modality::Visual, visual, cfg, st)?;
    let a = train_step(model, Modality::Audio, audio, cfg, st)?;
    Ok(JointStepStats { visual: v, audio: a })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEpochMetrics {
    pub visual: Option<EpochMetrics>,
    pub audio: Option<EpochMetrics>,
}

/// One joint epoch on a dual model. Its length is the larger stream's number
/// of batches; the smaller stream is recycled and reshuffled each time it runs
/// out. Either stream may be `None`, which reduces to plain training on the
/// other.
pub fn joint_epoch(
    model: &mut Model,
    visual: Option<&Dataset>,
    audio: Option<&Dataset>,
    cfg: &TrainConfig,
    st: &mut OptimState,
    epoch: usize,
) -> Result<JointEpochMetrics> {
    cfg.validate(model)?;
    for d in [visual, audio].into_iter().flatten() {
        if d.is_empty() {
            return Err(Error::config(format!("{} stream is empty", d.modality)));
        }
    }
    if visual.is_none() && audio.is_none() {
        return Err(Error::config("joint epoch needs at least one stream"));
    }
    let mut streams: Vec<(Recycler, Accum)> = [visual, audio]
        .into_iter()
        .flatten()
        .map(|d| (Recycler::new(d, cfg, epoch), Accum::default()))
        .collect();
    let steps = streams.iter().map(|(r, _)| r.steps_per_pass()).max().unwrap_or(0);
    for _ in 0..steps {
        for (rec, acc) in streams.iter_mut() {
            let batch = rec.next_batch();
            acc.add(train_step(model, rec.data.modality, &batch, cfg, st)?);
        }
    }
    let mut out = JointEpochMetrics {
        visual: None,
        audio: None,
    };
    for (rec, acc) in streams {
        let m = acc.finish()?;
        match rec.data.modality {
            Modality::Visual => out.visual = Some(m),
            Modality::Audio => out.audio = Some(m),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub sparsity: f64,
    /// Mean cross-entropy.
    pub loss: f64,
    pub activity: SpikeActivity,
}

const EVAL_CHUNK: usize = 64;

/// Accuracy, confusion matrix and sparsity of `model` on `data`, fed through
/// the `data.modality` encoder.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let n = model.spec.num_classes;
    let chunks: Vec<&[crate::events::Sample]> = data.samples.chunks(EVAL_CHUNK).collect();
    let parts: Vec<(Vec<usize>, f64, SpikeActivity)> = chunks
        .par_iter()
        .map(|chunk| {
            let inputs: Vec<&SpikeTensor> = chunk.iter().map(|s| &s.input).collect();
            let out = model.forward_batch(data.modality, &inputs)?;
            let mut loss = 0.0;
            for (b, s) in chunk.iter().enumerate() {
                let row = out.logits.row(b);
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - row[s.label];
            }
            Ok((out.predictions(), loss, out.activity))
        })
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0usize; n]; n];
    let mut correct = 0;
    let mut loss = 0.0;
    let mut activity = SpikeActivity::default();
    for (chunk, (preds, l, act)) in chunks.iter().zip(&parts) {
        for (s, &p) in chunk.iter().zip(preds) {
            if s.label >= n {
                return Err(Error::shape(format!("label {} for {n} classes", s.label)));
            }
            confusion[s.label][p] += 1;
            correct += usize::from(s.label == p);
        }
        loss += l;
        activity.merge(act);
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
        sparsity: sparsity(&activity)?,
        loss: loss / data.len() as f64,
        activity,
    })
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub acc: f64,
    pub sparsity: f64,
}

pub fn write_metrics_line(w: &mut impl Write, rec: &MetricsRecord) -> Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests;
