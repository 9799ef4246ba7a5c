use super::spec::{Arch, ModelSpec};
use crate::error::{Error, Result};
use crate::events::{Modality, SpikeTensor};
use crate::kernel::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::memory::HgrnVars;
use crate::rng::rng_for;
use crate::snn::{frames_from_batch, run_sequence_graph, Layer, LayerStack, SpikeActivity, SynapseActivity};

#[derive(Debug, Clone, Copy)]
struct HgrnIds {
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

/// A built model: encoder stack(s), memory block, classifier head and the
/// parameters they index into.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    visual: Option<LayerStack>,
    audio: Option<LayerStack>,
    hopfield: Option<ParamId>,
    hgrn: Option<HgrnIds>,
    head_weight: ParamId,
    head_bias: ParamId,
}

/// Tape handles produced by [`Model::forward_graph`].
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// Time-averaged classifier output, `[batch, classes]`.
    pub logits: Var,
    /// Feature-layer spikes per timestep, each `[batch, feature]`.
    pub features: Vec<Var>,
    /// Memory-block output per timestep, each `[batch, feature]`.
    pub memory: Vec<Var>,
    /// Time mean of `memory`, the representation the contrastive loss sees.
    pub embedding: Var,
    pub activity: SpikeActivity,
}

/// Result of running one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[classes]`.
    pub logits: Tensor,
    /// Feature-layer spikes, `[time, feature]`; always binary in hard mode.
    pub features: Tensor,
    /// Memory-block output, `[time, feature]`; equal to `features` for
    /// pass-through memory, real-valued otherwise.
    pub memory: Tensor,
    pub activity: SpikeActivity,
}

/// Result of running a batch without recording gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// `[batch, classes]`.
    pub logits: Tensor,
    /// Per-timestep feature spikes, each `[batch, feature]`.
    pub features: Vec<Tensor>,
    pub activity: SpikeActivity,
}

impl BatchOutput {
    /// Index of the largest logit per sample, ties to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.shape()[0])
            .map(|b| argmax(self.logits.row(b)))
            .collect()
    }

    /// Fraction of timesteps each feature neuron fired, `[batch, feature]`.
    pub fn rates(&self) -> Tensor {
        let t = self.features.len().max(1) as f64;
        let mut out = Tensor::zeros(self.features[0].shape());
        for f in &self.features {
            for (o, v) in out.data_mut().iter_mut().zip(f.data()) {
                *o += v;
            }
        }
        out.map(|v| v / t)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One weighted operation and its per-timestep cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynapticLayer {
    pub name: String,
    pub macs_per_step: u64,
    pub fan_out: u64,
}

struct Init<'a> {
    params: &'a mut ParamStore,
    seed: u64,
    gain: f64,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> ParamId {
        let bound = gain / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, bound, &mut rng_for(self.seed, name));
        self.params.add(name, t)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.params.add(name, Tensor::zeros(shape))
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, out: usize) -> Layer {
        let gain = self.gain;
        Layer::Dense {
            name: prefix.to_string(),
            weight: self.uniform(&format!("{prefix}.weight"), &[fan_in, out], fan_in, gain),
            bias: self.zeros(&format!("{prefix}.bias"), &[out]),
        }
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Layer {
        let gain = self.gain;
        Layer::Conv {
            name: prefix.to_string(),
            weight: self.uniform(
                &format!("{prefix}.weight"),
                &[c_out, c_in, k, k],
                c_in * k * k,
                gain,
            ),
            bias: self.zeros(&format!("{prefix}.bias"), &[c_out]),
            stride: 1,
            padding: k / 2,
        }
    }
}

fn lif(name: &str) -> Layer {
    Layer::Lif {
        name: name.to_string(),
    }
}

/// Builds the model described by `spec`. Every parameter is drawn from its own
/// stream keyed by `(seed, name)`, so identically named parameters agree across
/// models built with the same seed.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let d = spec.dims;
    let mut params = ParamStore::new();
    let mut init = Init {
        params: &mut params,
        seed,
        gain: spec.init_gain,
    };
    let mut visual = None;
    let mut audio = None;
    for &m in spec.modality.modalities() {
        match m {
            Modality::Visual => {
                let layers = vec![
                    init.conv("visual.conv1", d.visual_input[0], d.conv1, d.kernel),
                    lif("visual.lif1"),
                    Layer::MaxPool { size: 2 },
                    init.conv("visual.conv2", d.conv1, d.conv2, d.kernel),
                    lif("visual.lif2"),
                    Layer::MaxPool { size: 2 },
                    Layer::Flatten,
                    init.dense("visual.fc", d.visual_flat(), d.feature),
                    lif("visual.lif3"),
                ];
                visual = Some(LayerStack {
                    input_shape: d.visual_input.to_vec(),
                    layers,
                });
            }
            Modality::Audio => {
                let layers = vec![
                    init.dense("audio.fc1", d.audio_input, d.hidden1),
                    lif("audio.lif1"),
                    init.dense("audio.fc2", d.hidden1, d.hidden2),
                    lif("audio.lif2"),
                    init.dense("audio.fc3", d.hidden2, d.feature),
                    lif("audio.lif3"),
                ];
                audio = Some(LayerStack {
                    input_shape: vec![d.audio_input],
                    layers,
                });
            }
        }
    }
    let f = d.feature;
    let hgrn = spec.memory.uses_hgrn().then(|| HgrnIds {
        w_r: init.uniform("memory.hgrn.w_r", &[f, f], f, 1.0),
        u_r: init.uniform("memory.hgrn.u_r", &[f, f], f, 1.0),
        b_r: init.zeros("memory.hgrn.b_r", &[f]),
        w_h: init.uniform("memory.hgrn.w_h", &[f, f], f, 1.0),
        b_h: init.zeros("memory.hgrn.b_h", &[f]),
    });
    let hopfield = spec.memory.uses_hopfield().then(|| {
        let name = "memory.hopfield.patterns";
        let t = Tensor::randn(&[d.patterns, f], spec.hopfield.init_std, &mut rng_for(seed, name));
        init.params.add(name, t)
    });
    let head_weight = init.uniform("head.weight", &[f, spec.num_classes], f, 1.0);
    let head_bias = init.zeros("head.bias", &[spec.num_classes]);
    Ok(Model {
        spec: *spec,
        params,
        visual,
        audio,
        hopfield,
        hgrn,
        head_weight,
        head_bias,
    })
}

fn nonzero(t: &Tensor) -> u64 {
    t.data().iter().filter(|&&v| v != 0.0).count() as u64
}

/// Weighted operations one sample of `modality` passes through, in order.
pub fn synaptic_layers(spec: &ModelSpec, modality: Modality) -> Vec<SynapticLayer> {
    let d = spec.dims;
    let layer = |name: &str, macs: usize, fan_out: usize| SynapticLayer {
        name: name.to_string(),
        macs_per_step: macs as u64,
        fan_out: fan_out as u64,
    };
    let k2 = d.kernel * d.kernel;
    let mut out = match modality {
        Modality::Visual => {
            let [c, h, w] = d.visual_input;
            let (h2, w2) = (h / 2, w / 2);
            vec![
                layer("visual.conv1", h * w * d.conv1 * c * k2, d.conv1 * k2),
                layer("visual.conv2", h2 * w2 * d.conv2 * d.conv1 * k2, d.conv2 * k2),
                layer("visual.fc", d.visual_flat() * d.feature, d.feature),
            ]
        }
        Modality::Audio => vec![
            layer("audio.fc1", d.audio_input * d.hidden1, d.hidden1),
            layer("audio.fc2", d.hidden1 * d.hidden2, d.hidden2),
            layer("audio.fc3", d.hidden2 * d.feature, d.feature),
        ],
    };
    let f = d.feature;
    if spec.memory.uses_hgrn() {
        out.push(layer("memory.hgrn.input", 2 * f * f, 2 * f));
        out.push(layer("memory.hgrn.recurrent", f * f, f));
    }
    if spec.memory.uses_hopfield() {
        out.push(layer("memory.hopfield.scores", d.patterns * f, d.patterns));
        out.push(layer("memory.hopfield.readout", d.patterns * f, f));
    }
    out.push(layer("head", f * spec.num_classes, spec.num_classes));
    out
}

impl Model {
    pub fn arch(&self) -> Arch {
        self.spec.modality
    }

    pub fn stack(&self, m: Modality) -> Option<&LayerStack> {
        match m {
            Modality::Visual => self.visual.as_ref(),
            Modality::Audio => self.audio.as_ref(),
        }
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head_weight, self.head_bias)
    }

    /// Parameters whose name starts with `prefix`.
    pub fn param_ids(&self, prefix: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| name.starts_with(prefix))
            .map(|(id, _, _)| id)
            .collect()
    }

    fn check_input(&self, m: Modality, x: &SpikeTensor) -> Result<&LayerStack> {
        let stack = self
            .stack(m)
            .ok_or_else(|| Error::shape(format!("{} model has no {m} encoder", self.spec.modality)))?;
        if x.shape().len() != stack.input_shape.len() + 1 || x.shape()[1..] != stack.input_shape[..] {
            return Err(Error::shape(format!(
                "{m} encoder expects [time, {:?}], got {:?}",
                stack.input_shape,
                x.shape()
            )));
        }
        Ok(stack)
    }

    /// Runs a batch of `modality` samples on `g`. `bound` holds one handle per
    /// parameter, as returned by [`ParamStore::bind`].
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &[Var],
        modality: Modality,
        batch: &[&SpikeTensor],
    ) -> Result<BatchTrace> {
        let stack = match batch.first() {
            Some(x) => self.check_input(modality, x)?,
            None => return Err(Error::shape("empty batch")),
        };
        for x in batch {
            self.check_input(modality, x)?;
        }
        let frames: Vec<Var> = frames_from_batch(batch)?
            .into_iter()
            .map(|f| g.constant(f))
            .collect();
        let cfg = &self.spec.neuron;
        let trace = run_sequence_graph(g, stack, &self.params, bound, &frames, cfg)?;
        let mut activity = trace.activity;
        let n = batch.len();
        let f = self.spec.dims.feature;
        let steps = n as u64;
        let record = |activity: &mut SpikeActivity,
                      layer: &str,
                      macs: usize,
                      fan_out: usize,
                      binary: bool,
                      events: u64| {
            activity.record_synapse(SynapseActivity {
                layer: layer.to_string(),
                fan_out: fan_out as u64,
                macs_per_step: macs as u64,
                binary_input: binary,
                input_events: events,
                sample_steps: steps,
            });
        };

        let hgrn = self.hgrn.map(|ids| HgrnVars {
            w_r: bound[ids.w_r.0],
            u_r: bound[ids.u_r.0],
            b_r: bound[ids.b_r.0],
            w_h: bound[ids.w_h.0],
            b_h: bound[ids.b_h.0],
        });
        let mut h = hgrn.map(|_| g.constant(Tensor::zeros(&[n, f])));
        let mut memory = Vec::with_capacity(trace.outputs.len());
        let mut heads = Vec::with_capacity(trace.outputs.len());
        for &feat in &trace.outputs {
            let mut x = feat;
            let mut binary = true;
            if let (Some(p), Some(prev)) = (hgrn.as_ref(), h) {
                record(
                    &mut activity,
                    "memory.hgrn.input",
                    2 * f * f,
                    2 * f,
                    true,
                    nonzero(g.value(x)),
                );
                record(
                    &mut activity,
                    "memory.hgrn.recurrent",
                    f * f,
                    f,
                    false,
                    nonzero(g.value(prev)),
                );
                let next = crate::memory::hgrn_step_graph(g, x, prev, p)?;
                h = Some(next);
                x = next;
                binary = false;
            }
            if let Some(pid) = self.hopfield {
                let np = self.spec.dims.patterns;
                record(
                    &mut activity,
                    "memory.hopfield.scores",
                    np * f,
                    np,
                    binary,
                    nonzero(g.value(x)),
                );
                x = crate::memory::hopfield_retrieve_graph(
                    g,
                    x,
                    bound[pid.0],
                    self.spec.beta(),
                    self.spec.hopfield.iters,
                )?;
                // Every pattern carries a nonzero softmax weight.
                record(
                    &mut activity,
                    "memory.hopfield.readout",
                    np * f,
                    f,
                    false,
                    (n * np) as u64,
                );
                binary = false;
            }
            let c = self.spec.num_classes;
            record(&mut activity, "head", f * c, c, binary, nonzero(g.value(x)));
            let y = g.matmul(x, bound[self.head_weight.0])?;
            let y = g.add_bias(y, bound[self.head_bias.0])?;
            memory.push(x);
            heads.push(y);
        }
        let t = heads.len() as f64;
        let sum = g.add_n(&heads)?;
        let logits = g.scale(sum, 1.0 / t);
        let msum = g.add_n(&memory)?;
        let embedding = g.scale(msum, 1.0 / t);
        Ok(BatchTrace {
            logits,
            features: trace.outputs,
            memory,
            embedding,
            activity,
        })
    }

    fn bind_constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect()
    }

    /// Runs a batch without recording gradients.
    pub fn forward_batch(&self, modality: Modality, batch: &[&SpikeTensor]) -> Result<BatchOutput> {
        let mut g = Graph::new();
        let bound = self.bind_constants(&mut g);
        let trace = self.forward_graph(&mut g, &bound, modality, batch)?;
        Ok(BatchOutput {
            logits: g.value(trace.logits).clone(),
            features: trace.features.iter().map(|&v| g.value(v).clone()).collect(),
            activity: trace.activity,
        })
    }

    fn forward_one(&self, modality: Modality, x: &SpikeTensor) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let bound = self.bind_constants(&mut g);
        let trace = self.forward_graph(&mut g, &bound, modality, &[x])?;
        let stack_rows = |vars: &[Var]| -> Result<Tensor> {
            let f = self.spec.dims.feature;
            let data: Vec<f64> = vars.iter().flat_map(|&v| g.value(v).data().to_vec()).collect();
            Tensor::new(&[vars.len(), f], data)
        };
        Ok(ForwardOutput {
            logits: g.value(trace.logits).clone().reshape(&[self.spec.num_classes])?,
            features: stack_rows(&trace.features)?,
            memory: stack_rows(&trace.memory)?,
            activity: trace.activity,
        })
    }

    /// Runs one sample through a single-modality model.
    pub fn forward(&self, x: &SpikeTensor) -> Result<ForwardOutput> {
        match self.spec.modality {
            Arch::Visual => self.forward_one(Modality::Visual, x),
            Arch::Audio => self.forward_one(Modality::Audio, x),
            Arch::Dual => Err(Error::shape("dual model needs a modality tag, use forward_dual")),
        }
    }

    /// Routes one sample through the `tag` encoder of a dual model, then the
    /// shared memory block and classifier.
    pub fn forward_dual(&self, x: &SpikeTensor, tag: Modality) -> Result<ForwardOutput> {
        if self.spec.modality != Arch::Dual {
            return Err(Error::shape(format!(
                "forward_dual on a {} model",
                self.spec.modality
            )));
        }
        self.forward_one(tag, x)
    }

    /// Predicted class, ties broken toward the lowest index.
    pub fn predict(&self, x: &SpikeTensor, modality: Modality) -> Result<usize> {
        let out = self.forward_one(modality, x)?;
        Ok(argmax(out.logits.data()))
    }
}
