use crate::error::{Error, Result};
use crate::kernel::{Graph, Tensor, Var};
use crate::rng::Rng;

/// Modern (continuous) Hopfield layer with learnable patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldMemory {
    /// `[num_patterns, dim]`.
    pub patterns: Tensor,
    /// Inverse temperature.
    pub beta: f64,
    /// Retrieval iterations.
    pub iters: usize,
}

/// Quadratic and log-sum-exp energies of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfieldEnergy {
    /// `-xi^T (P^T P) xi`.
    pub quadratic: f64,
    /// `-(1/beta) lse(beta P xi) + xi^T xi / 2`.
    pub modern: f64,
}

impl HopfieldMemory {
    /// Gaussian patterns with std `1/sqrt(dim)`, `beta = 1/sqrt(dim)` and a
    /// single retrieval step.
    pub fn new(num_patterns: usize, dim: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        HopfieldMemory {
            patterns: Tensor::randn(&[num_patterns, dim], scale, rng),
            beta: scale,
            iters: 1,
        }
    }

    pub fn from_patterns(patterns: Tensor, beta: f64, iters: usize) -> Result<Self> {
        let mem = HopfieldMemory {
            patterns,
            beta,
            iters,
        };
        mem.validate()?;
        Ok(mem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns.rank() != 2 || self.patterns.is_empty() {
            return Err(Error::shape(format!(
                "patterns must be a non-empty matrix, got {:?}",
                self.patterns.shape()
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.iters == 0 {
            return Err(Error::config("hopfield needs at least one iteration"));
        }
        Ok(())
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.patterns.shape()[1]
    }
}

fn check_dims(g: &Graph, xi: Var, patterns: Var) -> Result<()> {
    let (xs, ps) = (g.shape(xi), g.shape(patterns));
    if xs.len() != 2 || ps.len() != 2 || xs[1] != ps[1] {
        return Err(Error::shape(format!(
            "hopfield state {xs:?} does not match patterns {ps:?}"
        )));
    }
    Ok(())
}

/// `iters` applications of `xi <- P^T softmax(beta P xi)` on `[batch, dim]`
/// states, differentiable in both `xi` and `patterns`.
pub fn hopfield_retrieve_graph(
    g: &mut Graph,
    xi: Var,
    patterns: Var,
    beta: f64,
    iters: usize,
) -> Result<Var> {
    check_dims(g, xi, patterns)?;
    let mut x = xi;
    for _ in 0..iters {
        let w = attention(g, x, patterns, beta)?;
        x = g.matmul(w, patterns)?;
    }
    Ok(x)
}

fn attention(g: &mut Graph, xi: Var, patterns: Var, beta: f64) -> Result<Var> {
    let scores = g.matmul_bt(xi, patterns)?;
    let scaled = g.scale(scores, beta);
    g.softmax(scaled, 1)
}

/// Softmax weights over patterns for one retrieval step, `[batch, num_patterns]`.
pub fn retrieval_weights(xi: &Tensor, mem: &HopfieldMemory) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(xi.clone());
    let p = g.constant(mem.patterns.clone());
    check_dims(&g, x, p)?;
    let w = attention(&mut g, x, p, mem.beta)?;
    Ok(g.value(w).clone())
}

pub fn hopfield_retrieve(xi: &Tensor, mem: &HopfieldMemory) -> Result<Tensor> {
    mem.validate()?;
    let mut g = Graph::new();
    let x = g.constant(xi.clone());
    let p = g.constant(mem.patterns.clone());
    let out = hopfield_retrieve_graph(&mut g, x, p, mem.beta, mem.iters)?;
    Ok(g.value(out).clone())
}

/// Energies of a single state `xi` of length `dim`.
pub fn hopfield_energy(xi: &[f64], mem: &HopfieldMemory) -> Result<HopfieldEnergy> {
    if xi.len() != mem.dim() {
        return Err(Error::shape(format!(
            "state of length {} for patterns of dim {}",
            xi.len(),
            mem.dim()
        )));
    }
    let proj: Vec<f64> = (0..mem.num_patterns())
        .map(|i| mem.patterns.row(i).iter().zip(xi).map(|(a, b)| a * b).sum())
        .collect();
    let quadratic = -proj.iter().map(|v| v * v).sum::<f64>();
    let m = proj.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(mem.beta * b));
    let lse = m + proj.iter().map(|&v| (mem.beta * v - m).exp()).sum::<f64>().ln();
    let modern = -lse / mem.beta + 0.5 * xi.iter().map(|v| v * v).sum::<f64>();
    Ok(HopfieldEnergy { quadratic, modern })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{grad_check_many, GradCheckOptions};
    use crate::rng::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// First `n` standard basis vectors of R^d.
    fn basis(n: usize, d: usize) -> Tensor {
        Tensor::from_fn(&[n, d], |i| if i % d == i / d { 1.0 } else { 0.0 })
    }

    #[test]
    fn default_shape_and_scale() {
        let mem = HopfieldMemory::new(256, 512, &mut rng(1));
        assert_eq!(mem.patterns.shape(), &[256, 512]);
        assert!((mem.beta - 1.0 / 512f64.sqrt()).abs() < 1e-15);
        assert_eq!(mem.iters, 1);
        let std = (mem.patterns.data().iter().map(|v| v * v).sum::<f64>() / mem.patterns.len() as f64).sqrt();
        assert!((std - 1.0 / 512f64.sqrt()).abs() < 2e-3);
    }

    #[test]
    fn stored_pattern_is_retrieved_at_large_beta() {
        let mem = HopfieldMemory::from_patterns(basis(4, 8), 20.0, 1).unwrap();
        let xi = Tensor::new(&[1, 8], mem.patterns.row(2).to_vec()).unwrap();
        let out = hopfield_retrieve(&xi, &mem).unwrap();
        assert!(cosine(out.row(0), mem.patterns.row(2)) >= 0.99);
    }

    #[test]
    fn vanishing_beta_gives_pattern_mean() {
        let mut r = rng(2);
        let mem = HopfieldMemory::from_patterns(Tensor::randn(&[5, 3], 1.0, &mut r), 1e-9, 1).unwrap();
        let xi = Tensor::randn(&[1, 3], 1.0, &mut r);
        let out = hopfield_retrieve(&xi, &mem).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..5).map(|i| mem.patterns.row(i)[c]).sum::<f64>() / 5.0;
            assert!((out.row(0)[c] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn second_iteration_sharpens_noisy_query() {
        // Query partway between two stored patterns of norm 3.
        let mut r = rng(3);
        let patterns = basis(6, 12).map(|v| 3.0 * v);
        let mut xi: Vec<f64> = (0..12)
            .map(|c| 0.6 * patterns.row(0)[c] + 0.4 * patterns.row(1)[c])
            .collect();
        for v in xi.iter_mut() {
            *v += 0.1 * (r.random::<f64>() - 0.5);
        }
        let xi = Tensor::new(&[1, 12], xi).unwrap();
        let one = HopfieldMemory::from_patterns(patterns.clone(), 1.0, 1).unwrap();
        let two = HopfieldMemory::from_patterns(patterns.clone(), 1.0, 2).unwrap();
        let c1 = cosine(hopfield_retrieve(&xi, &one).unwrap().row(0), patterns.row(0));
        let c2 = cosine(hopfield_retrieve(&xi, &two).unwrap().row(0), patterns.row(0));
        assert!(c2 > c1, "{c2} <= {c1}");
    }

    #[test]
    fn energy_examples() {
        let p = Tensor::from_rows(&[&[0.6, 0.8]]);
        let mem = HopfieldMemory::from_patterns(p, 1.0, 1).unwrap();
        assert_eq!(hopfield_energy(&[0.0, 0.0], &mem).unwrap().quadratic, 0.0);
        let e = hopfield_energy(&[0.6, 0.8], &mem).unwrap();
        assert!((e.quadratic + 1.0).abs() < 1e-12);
        // Single pattern: lse = beta * p.xi = 1.
        assert!((e.modern - (-1.0 + 0.5)).abs() < 1e-12);
        assert!(hopfield_energy(&[1.0], &mem).is_err());
    }

    #[test]
    fn modern_energy_never_increases() {
        let mut r = rng(4);
        let d = 16;
        let mem = HopfieldMemory::from_patterns(Tensor::randn(&[10, d], 1.0, &mut r), 0.8, 1).unwrap();
        for _ in 0..50 {
            let mut xi = Tensor::randn(&[1, d], 1.5, &mut r);
            let mut e = hopfield_energy(xi.data(), &mem).unwrap().modern;
            for _ in 0..6 {
                xi = hopfield_retrieve(&xi, &mem).unwrap();
                let next = hopfield_energy(xi.data(), &mem).unwrap().modern;
                assert!(next <= e + 1e-9, "{next} > {e}");
                e = next;
            }
        }
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let mem = HopfieldMemory::new(4, 8, &mut rng(5));
        let xi = Tensor::zeros(&[2, 7]);
        assert!(matches!(hopfield_retrieve(&xi, &mem), Err(Error::Shape(_))));
    }

    #[test]
    fn passes_grad_check_in_state_and_patterns() {
        let mut r = rng(6);
        let xi = Tensor::randn(&[3, 5], 1.0, &mut r);
        let p = Tensor::randn(&[4, 5], 1.0, &mut r);
        let w = Tensor::randn(&[3, 5], 1.0, &mut r);
        let report = grad_check_many(
            |g, v| {
                let out = hopfield_retrieve_graph(g, v[0], v[1], 0.7, 2)?;
                let wv = g.constant(w.clone());
                let prod = g.mul(out, wv)?;
                Ok(g.sum(prod))
            },
            &[xi, p],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(seed in 0u64..1000, beta in 0.01f64..20.0) {
            let mut r = rng(seed);
            let mem = HopfieldMemory::from_patterns(Tensor::randn(&[7, 4], 1.0, &mut r), beta, 1).unwrap();
            let xi = Tensor::randn(&[3, 4], 2.0, &mut r);
            let w = retrieval_weights(&xi, &mem).unwrap();
            for b in 0..3 {
                prop_assert!((w.row(b).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
