use super::activity::{SpikeActivity, SynapseActivity};
use super::{lif_step_graph, NeuronConfig};
use crate::error::{Error, Result};
use crate::events::SpikeTensor;
use crate::kernel::{Graph, ParamId, ParamStore, Tensor, Var};

/// One stage of a feed-forward spiking stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `x W + b` with `W: [in, out]`.
    Dense {
        name: String,
        weight: ParamId,
        bias: ParamId,
    },
    /// Cross-correlation with `W: [out, in, k, k]` plus per-channel bias.
    Conv {
        name: String,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
    Flatten,
    Lif {
        name: String,
    },
}

/// Layers applied to every timestep, with persistent membrane state per
/// [`Layer::Lif`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    /// Per-sample input shape of one timestep, e.g. `[2, 34, 34]` or `[700]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Everything recorded while unrolling a stack.
#[derive(Debug, Clone)]
pub struct SequenceTrace {
    /// Output of the last layer at each timestep.
    pub outputs: Vec<Var>,
    /// Spikes per LIF layer per timestep.
    pub spikes: Vec<Vec<Var>>,
    /// Pre-reset membrane potential per LIF layer per timestep.
    pub potentials: Vec<Vec<Var>>,
    pub activity: SpikeActivity,
}

fn nonzero(t: &Tensor) -> u64 {
    t.data().iter().filter(|&&v| v != 0.0).count() as u64
}

/// Stacks one timestep of each sample into `[B, ...]` frames, one per timestep.
pub fn frames_from_batch(samples: &[&SpikeTensor]) -> Result<Vec<Tensor>> {
    let first = samples.first().ok_or_else(|| Error::shape("empty batch"))?;
    let shape = first.shape();
    if let Some(bad) = samples.iter().find(|s| s.shape() != shape) {
        return Err(Error::shape(format!(
            "batch mixes shapes {shape:?} and {:?}",
            bad.shape()
        )));
    }
    let mut frame_shape = vec![samples.len()];
    frame_shape.extend_from_slice(&shape[1..]);
    (0..first.timesteps())
        .map(|t| {
            let mut data = Vec::with_capacity(samples.len() * first.frame_len());
            for s in samples {
                data.extend(s.frame(t).iter().map(|&v| f64::from(v)));
            }
            Tensor::new(&frame_shape, data)
        })
        .collect()
}

/// Unrolls `stack` over `frames` (each `[B, input_shape...]`).
pub fn run_sequence_graph(
    g: &mut Graph,
    stack: &LayerStack,
    params: &ParamStore,
    bound: &[Var],
    frames: &[Var],
    cfg: &NeuronConfig,
) -> Result<SequenceTrace> {
    let lif_layers = stack
        .layers
        .iter()
        .filter(|l| matches!(l, Layer::Lif { .. }))
        .count();
    let mut trace = SequenceTrace {
        outputs: Vec::with_capacity(frames.len()),
        spikes: vec![Vec::with_capacity(frames.len()); lif_layers],
        potentials: vec![Vec::with_capacity(frames.len()); lif_layers],
        activity: SpikeActivity::default(),
    };
    let mut membranes: Vec<Option<Var>> = vec![None; lif_layers];
    let mut batch = 0;
    for &frame in frames {
        let shape = g.shape(frame);
        if shape.len() < 2 || shape[1..] != stack.input_shape[..] {
            return Err(Error::shape(format!(
                "stack expects [B, {:?}], got {shape:?}",
                stack.input_shape
            )));
        }
        batch = shape[0];
        let mut x = frame;
        let mut binary = true;
        let mut lif_idx = 0;
        for layer in &stack.layers {
            match layer {
                Layer::Dense { name, weight, bias } => {
                    let w = params.get(*weight).shape();
                    let (fan_in, fan_out) = (w[0] as u64, w[1] as u64);
                    trace.activity.record_synapse(SynapseActivity {
                        layer: name.clone(),
                        fan_out,
                        macs_per_step: fan_in * fan_out,
                        binary_input: binary,
                        input_events: nonzero(g.value(x)),
                        sample_steps: batch as u64,
                    });
                    let y = g.matmul(x, bound[weight.0])?;
                    x = g.add_bias(y, bound[bias.0])?;
                    binary = false;
                }
                Layer::Conv {
                    name,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let events = nonzero(g.value(x));
                    let y = g.conv2d(x, bound[weight.0], *stride, *padding)?;
                    let k = params.get(*weight).shape();
                    let out = g.shape(y);
                    let (c_out, c_in, kh, kw) = (k[0] as u64, k[1] as u64, k[2] as u64, k[3] as u64);
                    let spatial = (out[2] * out[3]) as u64;
                    let stride2 = (*stride * *stride) as u64;
                    trace.activity.record_synapse(SynapseActivity {
                        layer: name.clone(),
                        fan_out: (c_out * kh * kw).div_ceil(stride2),
                        macs_per_step: spatial * c_out * c_in * kh * kw,
                        binary_input: binary,
                        input_events: events,
                        sample_steps: batch as u64,
                    });
                    x = g.add_channel_bias(y, bound[bias.0])?;
                    binary = false;
                }
                Layer::MaxPool { size } => {
                    x = g.max_pool2d(x, *size)?;
                }
                Layer::Flatten => {
                    let s = g.shape(x);
                    let rest: usize = s[1..].iter().product();
                    x = g.reshape(x, &[s[0], rest])?;
                }
                Layer::Lif { name } => {
                    let u = match membranes[lif_idx] {
                        Some(u) => u,
                        None => {
                            let rest = Tensor::full(g.shape(x), cfg.lif.u_rest);
                            g.constant(rest)
                        }
                    };
                    let (s, next, pre) = lif_step_graph(g, u, x, cfg)?;
                    let sv = g.value(s);
                    trace
                        .activity
                        .record_spikes(name, sv.sum().round() as u64, sv.len() as u64);
                    membranes[lif_idx] = Some(next);
                    trace.spikes[lif_idx].push(s);
                    trace.potentials[lif_idx].push(pre);
                    lif_idx += 1;
                    x = s;
                    binary = true;
                }
            }
        }
        trace.outputs.push(x);
    }
    trace.activity.samples = batch as u64;
    Ok(trace)
}

/// Runs one sample through `stack` without recording gradients.
///
/// Returns the per-timestep outputs stacked as `[time, features...]` and the
/// recorded activity.
pub fn run_sequence(
    stack: &LayerStack,
    params: &ParamStore,
    x: &SpikeTensor,
    cfg: &NeuronConfig,
) -> Result<(Tensor, SpikeActivity)> {
    if x.shape()[1..] != stack.input_shape[..] {
        return Err(Error::shape(format!(
            "input {:?} does not match stack input {:?}",
            x.shape(),
            stack.input_shape
        )));
    }
    let mut g = Graph::new();
    let bound: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
    let frames: Vec<Var> = frames_from_batch(&[x])?
        .into_iter()
        .map(|f| g.constant(f))
        .collect();
    let trace = run_sequence_graph(&mut g, stack, params, &bound, &frames, cfg)?;
    let mut data = Vec::new();
    let mut shape = vec![trace.outputs.len()];
    for &o in &trace.outputs {
        let v = g.value(o);
        if shape.len() == 1 {
            shape.extend_from_slice(&v.shape()[1..]);
        }
        data.extend_from_slice(v.data());
    }
    Ok((Tensor::new(&shape, data)?, trace.activity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{sparsity, LifParams};

    /// Dense(2 -> 2) followed by LIF.
    fn toy() -> (LayerStack, ParamStore) {
        let mut params = ParamStore::new();
        let weight = params.add("fc.weight", Tensor::from_rows(&[&[1.2, 0.4], &[0.6, 1.0]]));
        let bias = params.add("fc.bias", Tensor::zeros(&[2]));
        let stack = LayerStack {
            input_shape: vec![2],
            layers: vec![
                Layer::Dense {
                    name: "fc".into(),
                    weight,
                    bias,
                },
                Layer::Lif { name: "lif".into() },
            ],
        };
        (stack, params)
    }

    #[test]
    fn zero_input_is_silent() {
        let (stack, params) = toy();
        let x = SpikeTensor::zeros(&[5, 2]);
        let (out, act) = run_sequence(&stack, &params, &x, &NeuronConfig::default()).unwrap();
        assert_eq!(out.sum(), 0.0);
        assert_eq!(act.total_spikes(), 0);
        assert_eq!(sparsity(&act).unwrap(), 1.0);
    }

    #[test]
    fn doubling_bins_doubles_neuron_steps() {
        let (stack, params) = toy();
        let a = SpikeTensor::from_vec(&[2, 2], vec![1, 0, 0, 1]).unwrap();
        let b = SpikeTensor::from_vec(&[4, 2], vec![1, 0, 1, 0, 0, 1, 0, 1]).unwrap();
        let cfg = NeuronConfig::default();
        let (_, act_a) = run_sequence(&stack, &params, &a, &cfg).unwrap();
        let (_, act_b) = run_sequence(&stack, &params, &b, &cfg).unwrap();
        assert_eq!(act_b.total_neuron_steps(), 2 * act_a.total_neuron_steps());
    }

    #[test]
    fn toy_stack_matches_hand_unroll() {
        // tau=2, rest=0, r=1, theta=1: u' = 0.5 u + 0.5 i.
        // t0: x=[1,1] -> i=[1.8, 1.4] -> u'=[0.9, 0.7], no spikes.
        // t1: x=[1,0] -> i=[1.2, 0.4] -> u'=[0.45+0.6, 0.35+0.2]=[1.05, 0.55]
        //     -> neuron 0 spikes and resets.
        let (stack, params) = toy();
        let x = SpikeTensor::from_vec(&[2, 2], vec![1, 1, 1, 0]).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let frames: Vec<Var> = frames_from_batch(&[&x])
            .unwrap()
            .into_iter()
            .map(|f| g.constant(f))
            .collect();
        let cfg = NeuronConfig {
            lif: LifParams::default(),
            ..Default::default()
        };
        let trace = run_sequence_graph(&mut g, &stack, &params, &bound, &frames, &cfg).unwrap();
        let close = |v: &Tensor, want: &[f64]| v.data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(close(g.value(trace.potentials[0][0]), &[0.9, 0.7]));
        assert!(close(g.value(trace.potentials[0][1]), &[1.05, 0.55]));
        assert_eq!(g.value(trace.spikes[0][0]).data(), &[0.0, 0.0]);
        assert_eq!(g.value(trace.spikes[0][1]).data(), &[1.0, 0.0]);
        assert_eq!(trace.activity.total_spikes(), 1);
        assert_eq!(trace.activity.synapses[0].input_events, 3);
    }

    #[test]
    fn sparsity_matches_brute_force_recount() {
        let (stack, params) = toy();
        let x = SpikeTensor::from_vec(&[6, 2], vec![1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1]).unwrap();
        let (out, act) = run_sequence(&stack, &params, &x, &NeuronConfig::default()).unwrap();
        let spikes = out.data().iter().filter(|&&v| v == 1.0).count() as f64;
        let expected = 1.0 - spikes / out.len() as f64;
        assert_eq!(sparsity(&act).unwrap(), expected);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (stack, params) = toy();
        let x = SpikeTensor::zeros(&[3, 5]);
        assert!(matches!(
            run_sequence(&stack, &params, &x, &NeuronConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}
