//! Leaky integrate-and-fire dynamics with surrogate-gradient spikes.
//!
//! The membrane follows `tau_m du/dt = -(u - u_rest) + r i(t)`, integrated with
//! forward Euler. A neuron spikes when the updated potential reaches `theta`
//! and is then hard-reset to `u_rest`. With hard spikes the reset is detached
//! from the tape; soft spikes keep it differentiable.

mod activity;
mod stack;

pub use activity::{sparsity, NeuronActivity, SpikeActivity, SynapseActivity};
pub use stack::{frames_from_batch, run_sequence, run_sequence_graph, Layer, LayerStack, SequenceTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Graph, SpikeMode, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    /// Membrane time constant, in timesteps.
    pub tau_m: f64,
    pub u_rest: f64,
    /// Input resistance.
    pub r: f64,
    pub theta: f64,
    pub dt: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau_m: 2.0,
            u_rest: 0.0,
            r: 1.0,
            theta: 1.0,
            dt: 1.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0) {
            return Err(Error::config(format!(
                "tau_m must be positive, got {}",
                self.tau_m
            )));
        }
        if !(self.theta > self.u_rest) {
            return Err(Error::config(format!(
                "threshold {} must exceed resting potential {}",
                self.theta, self.u_rest
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        Ok(())
    }

    /// Coefficient of `u` in the Euler update.
    pub fn decay(&self) -> f64 {
        1.0 - self.dt / self.tau_m
    }

    /// Coefficient of the input current.
    pub fn gain(&self) -> f64 {
        self.dt * self.r / self.tau_m
    }

    /// Constant term pulling toward rest.
    pub fn shift(&self) -> f64 {
        self.dt * self.u_rest / self.tau_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateParams {
    pub alpha: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams { alpha: 10.0 }
    }
}

/// Everything a spiking layer needs besides its weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub lif: LifParams,
    pub surrogate: SurrogateParams,
    pub mode: SpikeMode,
}

/// Membrane potentials of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub u: Tensor,
}

impl LifState {
    pub fn at_rest(shape: &[usize], p: &LifParams) -> Self {
        LifState {
            u: Tensor::full(shape, p.u_rest),
        }
    }
}

/// One Euler step on plain tensors. Returns the binary spikes and the next
/// state.
pub fn lif_step(state: &LifState, input: &Tensor, p: &LifParams) -> Result<(Tensor, LifState)> {
    if state.u.shape() != input.shape() {
        return Err(Error::shape(format!(
            "membrane {:?} vs input {:?}",
            state.u.shape(),
            input.shape()
        )));
    }
    let mut spikes = Vec::with_capacity(input.len());
    let mut next = Vec::with_capacity(input.len());
    for (&u, &i) in state.u.data().iter().zip(input.data()) {
        let updated = u + (p.dt / p.tau_m) * (-(u - p.u_rest) + p.r * i);
        debug_assert!(updated.is_finite(), "membrane potential became {updated}");
        if updated >= p.theta {
            spikes.push(1.0);
            next.push(p.u_rest);
        } else {
            spikes.push(0.0);
            next.push(updated);
        }
    }
    Ok((
        Tensor::new(input.shape(), spikes)?,
        LifState {
            u: Tensor::new(input.shape(), next)?,
        },
    ))
}

/// Surrogate derivative `1 / (alpha |v| + 1)^2` of the spike step at `v = u - theta`.
pub fn surrogate_grad(v: f64, sp: &SurrogateParams) -> f64 {
    let d = sp.alpha * v.abs() + 1.0;
    1.0 / (d * d)
}

/// Spike nonlinearity on `u - theta` recorded on the tape.
pub fn spike_surrogate(g: &mut Graph, v: Var, sp: &SurrogateParams, mode: SpikeMode) -> Var {
    g.spike(v, 0.0, sp.alpha, mode)
}

/// Differentiable LIF step. Returns `(spikes, next membrane, pre-reset membrane)`.
pub fn lif_step_graph(g: &mut Graph, u: Var, input: Var, cfg: &NeuronConfig) -> Result<(Var, Var, Var)> {
    let p = &cfg.lif;
    let updated = g.lif_integrate(u, input, p.decay(), p.gain(), p.shift())?;
    let spikes = g.spike(updated, p.theta, cfg.surrogate.alpha, cfg.mode);
    let next = match cfg.mode {
        SpikeMode::Hard => g.lif_reset(updated, spikes, p.u_rest)?,
        // Soft spikes are smooth in `u`, so keep the reset on the tape and the
        // gradient exact.
        SpikeMode::Soft => {
            let keep = g.affine(spikes, -1.0, 1.0);
            let kept = g.mul(updated, keep)?;
            let rest = g.scale(spikes, p.u_rest);
            g.add(kept, rest)?
        }
    };
    Ok((spikes, next, updated))
}
