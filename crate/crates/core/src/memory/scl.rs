use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Graph, Tensor, Var};

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SCLConfig {
    /// Temperature.
    pub tau: f64,
    /// Weight of the contrastive term in `CE + weight * SCL`.
    pub weight: f64,
}

impl Default for SCLConfig {
    fn default() -> Self {
        SCLConfig {
            tau: 0.1,
            weight: 0.5,
        }
    }
}

impl SCLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("scl tau must be > 0, got {}", self.tau)));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::config(format!(
                "scl weight must be >= 0, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Contrastive loss on `[batch, d]` features, recorded on the tape.
/// Rows are l2-normalized first.
pub fn scl_loss_graph(g: &mut Graph, z: Var, labels: &[usize], cfg: &SCLConfig) -> Result<Var> {
    cfg.validate()?;
    let shape = g.shape(z);
    if shape.len() != 2 {
        return Err(Error::shape(format!("scl expects [batch, d], got {shape:?}")));
    }
    if shape[0] < 2 {
        return Err(Error::DegenerateBatch(format!(
            "contrastive loss needs at least 2 samples, got {}",
            shape[0]
        )));
    }
    let zn = g.l2_normalize(z, NORM_EPS);
    g.supcon(zn, labels, cfg.tau)
}

pub fn scl_loss(z: &Tensor, labels: &[usize], cfg: &SCLConfig) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let loss = scl_loss_graph(&mut g, v, labels, cfg)?;
    Ok(g.value(loss).item())
}
