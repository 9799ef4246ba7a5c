use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spike counts of one LIF layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronActivity {
    pub layer: String,
    pub spikes: u64,
    pub neuron_steps: u64,
}

/// Presynaptic traffic into one weighted layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynapseActivity {
    pub layer: String,
    /// Postsynaptic targets reached by one presynaptic neuron.
    pub fan_out: u64,
    /// Dense multiply-accumulates for one sample at one timestep.
    pub macs_per_step: u64,
    /// Whether the layer input is spike-valued.
    pub binary_input: bool,
    /// Nonzero presynaptic values, summed over samples and timesteps.
    pub input_events: u64,
    pub sample_steps: u64,
}

/// Activity recorded over a forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeActivity {
    pub neurons: Vec<NeuronActivity>,
    pub synapses: Vec<SynapseActivity>,
    pub samples: u64,
}

impl SpikeActivity {
    pub fn total_spikes(&self) -> u64 {
        self.neurons.iter().map(|n| n.spikes).sum()
    }

    pub fn total_neuron_steps(&self) -> u64 {
        self.neurons.iter().map(|n| n.neuron_steps).sum()
    }

    pub(crate) fn record_spikes(&mut self, layer: &str, spikes: u64, neuron_steps: u64) {
        match self.neurons.iter_mut().find(|n| n.layer == layer) {
            Some(n) => {
                n.spikes += spikes;
                n.neuron_steps += neuron_steps;
            }
            None => self.neurons.push(NeuronActivity {
                layer: layer.to_string(),
                spikes,
                neuron_steps,
            }),
        }
    }

    pub(crate) fn record_synapse(&mut self, rec: SynapseActivity) {
        match self.synapses.iter_mut().find(|s| s.layer == rec.layer) {
            Some(s) => {
                s.input_events += rec.input_events;
                s.sample_steps += rec.sample_steps;
                s.binary_input &= rec.binary_input;
            }
            None => self.synapses.push(rec),
        }
    }

    /// Adds another pass's counts into this one, matching layers by name.
    pub fn merge(&mut self, other: &SpikeActivity) {
        for n in &other.neurons {
            self.record_spikes(&n.layer, n.spikes, n.neuron_steps);
        }
        for s in &other.synapses {
            self.record_synapse(s.clone());
        }
        self.samples += other.samples;
    }
}

/// `1 - spikes / neuron_steps` over all LIF layers.
pub fn sparsity(activity: &SpikeActivity) -> Result<f64> {
    let steps = activity.total_neuron_steps();
    if steps == 0 {
        return Err(Error::UndefinedSparsity);
    }
    Ok(1.0 - activity.total_spikes() as f64 / steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_layer(spikes: u64, steps: u64) -> SpikeActivity {
        let mut a = SpikeActivity::default();
        a.record_spikes("lif", spikes, steps);
        a
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&one_layer(0, 100)).unwrap(), 1.0);
        assert!((sparsity(&one_layer(3, 100)).unwrap() - 0.97).abs() < 1e-15);
        assert!(matches!(
            sparsity(&SpikeActivity::default()),
            Err(Error::UndefinedSparsity)
        ));
    }

    #[test]
    fn merge_adds_by_layer() {
        let mut a = one_layer(2, 10);
        a.merge(&one_layer(3, 10));
        assert_eq!(a.neurons.len(), 1);
        assert_eq!(a.total_spikes(), 5);
        assert_eq!(a.total_neuron_steps(), 20);
    }
}
