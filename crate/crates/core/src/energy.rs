//! Operation counts: dense multiply-accumulates of a matched ANN against the
//! accumulate-only synaptic events of the spiking network.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Dataset, Modality, SpikeTensor};
use crate::models::{synaptic_layers, Model, ModelSpec};
use crate::snn::{sparsity, SpikeActivity};

/// Dense MACs for one sample of `modality`: every weighted layer evaluated
/// densely at every timestep.
pub fn count_ann_macs(spec: &ModelSpec, modality: Modality) -> u64 {
    let per_step: u64 = synaptic_layers(spec, modality)
        .iter()
        .map(|l| l.macs_per_step)
        .sum();
    per_step * spec.dims.bins(modality) as u64
}

/// Synaptic events over all spike-driven layers: each input spike costs one
/// accumulate per postsynaptic target.
pub fn synops(activity: &SpikeActivity) -> u64 {
    activity
        .synapses
        .iter()
        .filter(|s| s.binary_input)
        .map(|s| s.input_events * s.fan_out)
        .sum()
}

/// Dense MACs spent in layers whose input is real-valued (memory blocks and
/// anything after them).
pub fn dense_macs(activity: &SpikeActivity) -> u64 {
    activity
        .synapses
        .iter()
        .filter(|s| !s.binary_input)
        .map(|s| s.macs_per_step * s.sample_steps)
        .sum()
}

fn check_layers(activity: &SpikeActivity, spec: &ModelSpec, modality: Modality) -> Result<()> {
    let plan = synaptic_layers(spec, modality);
    for s in &activity.synapses {
        match plan.iter().find(|l| l.name == s.layer) {
            Some(l) if l.fan_out == s.fan_out && l.macs_per_step == s.macs_per_step => {}
            Some(_) => {
                return Err(Error::Accounting(format!(
                    "layer `{}` recorded with a different shape than the model declares",
                    s.layer
                )))
            }
            None => {
                return Err(Error::Accounting(format!(
                    "layer `{}` is not part of a {} {} model",
                    s.layer, modality, spec.memory
                )))
            }
        }
    }
    Ok(())
}

/// Total synaptic events in `activity`, after checking every recorded layer
/// belongs to `spec`.
pub fn count_snn_synops(activity: &SpikeActivity, spec: &ModelSpec, modality: Modality) -> Result<u64> {
    check_layers(activity, spec, modality)?;
    Ok(synops(activity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsReport {
    pub modality: Modality,
    pub samples: u64,
    /// Per sample.
    pub ann_macs: u64,
    /// Mean per sample.
    pub snn_synops: f64,
    /// Mean per sample, real-valued layers only.
    pub snn_dense_macs: f64,
    pub sparsity: f64,
    /// `ann_macs / snn_synops`; `None` when there were no synaptic events.
    pub efficiency_ratio: Option<f64>,
    /// `ann_macs / (snn_synops + snn_dense_macs)`.
    pub total_ratio: Option<f64>,
}

impl OpsReport {
    pub fn from_activity(spec: &ModelSpec, modality: Modality, activity: &SpikeActivity) -> Result<Self> {
        if activity.samples == 0 {
            return Err(Error::Accounting("no samples recorded".into()));
        }
        let syn = count_snn_synops(activity, spec, modality)? as f64 / activity.samples as f64;
        let dense = dense_macs(activity) as f64 / activity.samples as f64;
        let ann = count_ann_macs(spec, modality);
        let ratio = |den: f64| (den > 0.0).then(|| ann as f64 / den);
        Ok(OpsReport {
            modality,
            samples: activity.samples,
            ann_macs: ann,
            snn_synops: syn,
            snn_dense_macs: dense,
            sparsity: sparsity(activity)?,
            efficiency_ratio: ratio(syn),
            total_ratio: ratio(syn + dense),
        })
    }
}

const CHUNK: usize = 64;

/// Runs `data` through `model` and averages the operation counts per sample.
pub fn efficiency_report(model: &Model, data: &Dataset) -> Result<OpsReport> {
    if data.is_empty() {
        return Err(Error::config("cannot measure an empty dataset"));
    }
    let parts: Vec<SpikeActivity> = data
        .samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let inputs: Vec<&SpikeTensor> = chunk.iter().map(|s| &s.input).collect();
            Ok(model.forward_batch(data.modality, &inputs)?.activity)
        })
        .collect::<Result<_>>()?;
    let mut activity = SpikeActivity::default();
    for p in &parts {
        activity.merge(p);
    }
    OpsReport::from_activity(&model.spec, data.modality, &activity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{synth_dataset, SynthConfig};
    use crate::kernel::{ParamStore, Tensor};
    use crate::memory::MemoryKind;
    use crate::models::{build_model, Arch, ModelDims};
    use crate::snn::{run_sequence, Layer, LayerStack, NeuronConfig, SynapseActivity};

    #[test]
    fn ann_macs_closed_form() {
        let mut spec = ModelSpec::new(Arch::Audio, MemoryKind::None);
        spec.dims.audio_input = 700;
        let plan = synaptic_layers(&spec, Modality::Audio);
        assert_eq!(plan[0].macs_per_step * 100, 71_680_000);
        assert_eq!(plan[0].macs_per_step, 700 * 1024);
        let total: u64 = [700 * 1024, 1024 * 1024, 1024 * 512, 512 * 10]
            .iter()
            .sum::<u64>()
            * 100;
        assert_eq!(count_ann_macs(&spec, Modality::Audio), total);
    }

    #[test]
    fn ann_macs_unit_conv() {
        // A 1x1 conv with one channel on a 4x4 map is 16 MACs per step.
        let mut spec = ModelSpec::new(Arch::Visual, MemoryKind::None);
        spec.dims.visual_input = [1, 4, 4];
        spec.dims.conv1 = 1;
        spec.dims.kernel = 1;
        assert_eq!(synaptic_layers(&spec, Modality::Visual)[0].macs_per_step, 16);
    }

    #[test]
    fn spikes_times_fan_out() {
        assert_eq!(synops(&SpikeActivity::default()), 0);
        let mut a = SpikeActivity::default();
        a.record_synapse(SynapseActivity {
            layer: "fc".into(),
            fan_out: 10,
            macs_per_step: 30,
            binary_input: true,
            input_events: 2,
            sample_steps: 1,
        });
        assert_eq!(synops(&a), 20);
    }

    #[test]
    fn toy_network_matches_per_spike_count() {
        // Dense(3 -> 4) -> LIF -> Dense(4 -> 2) -> LIF with strong weights.
        let mut params = ParamStore::new();
        let w1 = params.add("fc1.weight", Tensor::full(&[3, 4], 1.5));
        let b1 = params.add("fc1.bias", Tensor::zeros(&[4]));
        let w2 = params.add("fc2.weight", Tensor::full(&[4, 2], 0.6));
        let b2 = params.add("fc2.bias", Tensor::zeros(&[2]));
        let stack = LayerStack {
            input_shape: vec![3],
            layers: vec![
                Layer::Dense {
                    name: "fc1".into(),
                    weight: w1,
                    bias: b1,
                },
                Layer::Lif { name: "lif1".into() },
                Layer::Dense {
                    name: "fc2".into(),
                    weight: w2,
                    bias: b2,
                },
                Layer::Lif { name: "lif2".into() },
            ],
        };
        let x = SpikeTensor::from_vec(&[4, 3], vec![1, 0, 1, 0, 0, 0, 1, 1, 1, 0, 1, 0]).unwrap();
        let (_, act) = run_sequence(&stack, &params, &x, &NeuronConfig::default()).unwrap();
        let lif1 = &act.neurons[0];
        let brute = 6 * 4 + lif1.spikes * 2;
        assert_eq!(synops(&act), brute);
    }

    fn desk(memory: MemoryKind) -> ModelSpec {
        ModelSpec::new(Arch::Visual, memory)
            .with_dims(ModelDims::desk())
            .with_classes(4)
    }

    fn data() -> Dataset {
        let streams = synth_dataset(&SynthConfig::spatial(4, 5, 2)).unwrap();
        Dataset::from_streams(&streams, 25, 4).unwrap()
    }

    #[test]
    fn report_is_deterministic_and_consistent() {
        let model = build_model(&desk(MemoryKind::Hgrn), 1).unwrap();
        let d = data();
        let a = efficiency_report(&model, &d).unwrap();
        assert_eq!(a, efficiency_report(&model, &d).unwrap());
        let eval = crate::train::evaluate(&model, &d).unwrap();
        assert_eq!(a.sparsity, eval.sparsity);
        assert_eq!(a.samples, 20);
        assert!(a.snn_dense_macs > 0.0);
        assert!(a.efficiency_ratio.unwrap() > 1.0);
    }

    #[test]
    fn higher_threshold_means_fewer_synops() {
        let d = data();
        let low = build_model(&desk(MemoryKind::None), 1).unwrap();
        let mut spec = desk(MemoryKind::None);
        spec.neuron.lif.theta = 2.0;
        let high = build_model(&spec, 1).unwrap();
        let a = efficiency_report(&low, &d).unwrap();
        let b = efficiency_report(&high, &d).unwrap();
        assert!(b.snn_synops < a.snn_synops);
    }

    #[test]
    fn silent_network_has_unit_sparsity_and_no_ratio() {
        let model = build_model(&desk(MemoryKind::None), 1).unwrap();
        let d = Dataset {
            modality: Modality::Visual,
            num_classes: 4,
            samples: vec![crate::events::Sample {
                input: SpikeTensor::zeros(&[25, 2, 16, 16]),
                label: 0,
            }],
        };
        let r = efficiency_report(&model, &d).unwrap();
        assert_eq!(r.sparsity, 1.0);
        assert_eq!(r.snn_synops, 0.0);
        assert_eq!(r.efficiency_ratio, None);
    }

    #[test]
    fn foreign_layers_are_accounting_errors() {
        let mut a = SpikeActivity {
            samples: 1,
            ..Default::default()
        };
        a.record_synapse(SynapseActivity {
            layer: "audio.fc1".into(),
            fan_out: 1,
            macs_per_step: 1,
            binary_input: true,
            input_events: 1,
            sample_steps: 1,
        });
        let err = count_snn_synops(&a, &desk(MemoryKind::None), Modality::Visual).unwrap_err();
        assert!(matches!(err, Error::Accounting(_)));
    }

    #[test]
    fn synops_add_across_samples() {
        let model = build_model(&desk(MemoryKind::Scl), 2).unwrap();
        let d = data();
        let all: Vec<&SpikeTensor> = d.samples.iter().map(|s| &s.input).collect();
        let whole = model.forward_batch(Modality::Visual, &all).unwrap().activity;
        let parts: u64 = all
            .iter()
            .map(|x| synops(&model.forward_batch(Modality::Visual, &[x]).unwrap().activity))
            .sum();
        assert_eq!(synops(&whole), parts);
    }
}
