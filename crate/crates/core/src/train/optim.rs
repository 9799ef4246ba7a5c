use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers, one pair per parameter. Each parameter keeps its own step
/// count so that tensors skipped by a partial update are bias-corrected
/// correctly later.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub param_steps: Vec<u64>,
    /// Calls to [`adamw_step`].
    pub step: u64,
    pub warnings: Vec<String>,
}

impl OptimState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        OptimState {
            m: zeros(),
            v: zeros(),
            param_steps: vec![0; params.len()],
            step: 0,
            warnings: Vec::new(),
        }
    }
}

/// Decoupled-weight-decay Adam:
/// `theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta`.
///
/// Only parameters with `Some` gradient move. A gradient with a non-finite
/// entry leaves its parameter untouched and records a warning.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    st: &mut OptimState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || st.m.len() != params.len() {
        return Err(Error::shape(format!(
            "{} gradients and {} moment buffers for {} parameters",
            grads.len(),
            st.m.len(),
            params.len()
        )));
    }
    st.step += 1;
    for (i, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let name = params.name(crate::kernel::ParamId(i)).to_string();
        let theta = &mut params.tensors_mut()[i];
        if grad.shape() != theta.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter `{name}` {:?}",
                grad.shape(),
                theta.shape()
            )));
        }
        if !grad.is_finite() {
            st.warnings.push(format!(
                "step {}: non-finite gradient for `{name}`, skipped",
                st.step
            ));
            continue;
        }
        st.param_steps[i] += 1;
        let t = st.param_steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = st.m[i].data_mut();
        let v = st.v[i].data_mut();
        for (((p, &g), m), v) in theta.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + cfg.lr * cfg.weight_decay * *p;
        }
    }
    Ok(())
}

/// Scales all present gradients so their joint l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
