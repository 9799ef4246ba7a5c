use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::kernel::gemm;
use crate::kernel::Tensor;
use crate::rng::rng_for;

/// Settings of the logistic-regression transfer probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2: f64,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-3,
            iters: 500,
            lr: 0.5,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// `[dim, classes]`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

fn softmax_rows(logits: &mut [f64], k: usize) {
    for row in logits.chunks_mut(k) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

impl Probe {
    pub fn fit(f: &FeatureMatrix, classes: usize, cfg: &ProbeConfig) -> Result<Probe> {
        if f.is_empty() {
            return Err(Error::config("probe needs training samples"));
        }
        if let Some(&bad) = f.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::shape(format!("label {bad} for {classes} classes")));
        }
        let (n, d, k) = (f.len(), f.dim(), classes);
        let mut w = Tensor::randn(&[d, k], 0.01, &mut rng_for(cfg.seed, "probe"));
        let mut b = vec![0.0; k];
        let x = f.rows.data();
        let mut p = vec![0.0; n * k];
        let mut gw = vec![0.0; d * k];
        for _ in 0..cfg.iters {
            for row in p.chunks_mut(k) {
                row.copy_from_slice(&b);
            }
            gemm(n, d, k, 1.0, x, false, w.data(), false, 1.0, &mut p);
            softmax_rows(&mut p, k);
            for (i, &y) in f.labels.iter().enumerate() {
                p[i * k + y] -= 1.0;
            }
            // p now holds dLoss/dlogits * n.
            gemm(d, n, k, 1.0 / n as f64, x, true, &p, false, 0.0, &mut gw);
            let mut gb = vec![0.0; k];
            for row in p.chunks(k) {
                gb.iter_mut().zip(row).for_each(|(g, v)| *g += v / n as f64);
            }
            for (wv, g) in w.data_mut().iter_mut().zip(&gw) {
                *wv -= cfg.lr * (g + cfg.l2 * *wv);
            }
            b.iter_mut().zip(&gb).for_each(|(bv, g)| *bv -= cfg.lr * g);
        }
        Ok(Probe { weight: w, bias: b })
    }

    pub fn predict(&self, f: &FeatureMatrix) -> Result<Vec<usize>> {
        let (d, k) = (self.weight.shape()[0], self.weight.shape()[1]);
        if f.dim() != d {
            return Err(Error::shape(format!("probe dim {d}, features dim {}", f.dim())));
        }
        let n = f.len();
        let mut logits = vec![0.0; n * k];
        for row in logits.chunks_mut(k) {
            row.copy_from_slice(&self.bias);
        }
        gemm(
            n,
            d,
            k,
            1.0,
            f.rows.data(),
            false,
            self.weight.data(),
            false,
            1.0,
            &mut logits,
        );
        Ok(logits.chunks(k).map(crate::models::argmax).collect())
    }
}

/// Fits a probe on `src` and reports its accuracy on `dst`.
pub fn zero_shot_transfer(src: &FeatureMatrix, dst: &FeatureMatrix, cfg: &ProbeConfig) -> Result<f64> {
    if dst.is_empty() {
        return Err(Error::config("transfer target has no samples"));
    }
    let classes = src
        .num_classes
        .max(dst.num_classes)
        .max(src.labels.iter().chain(&dst.labels).max().map_or(0, |m| m + 1));
    let probe = Probe::fit(src, classes, cfg)?;
    let preds = probe.predict(dst)?;
    let correct = preds.iter().zip(&dst.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / dst.len() as f64)
}
