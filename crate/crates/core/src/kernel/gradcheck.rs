use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error, so that coordinates whose
    /// gradient is (numerically) zero are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            tol: 1e-4,
            max_coords_per_tensor: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// (tensor, flat index, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compares the analytic gradient of scalar `f(theta)` with central
/// differences at every coordinate of `theta`.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let opts = GradCheckOptions {
        eps,
        tol,
        ..Default::default()
    };
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(theta), &opts)
}

fn evaluate<F>(f: &F, thetas: &[Tensor]) -> Result<(f64, Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = thetas.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out);
    if value.len() != 1 {
        return Err(Error::shape(format!(
            "grad_check needs a scalar, got {:?}",
            value.shape()
        )));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok((v, g, vars, out))
}

/// Multi-tensor variant of [`grad_check`].
pub fn grad_check_many<F>(f: F, thetas: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, g, vars, out) = evaluate(&f, thetas)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(thetas)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);
    if let Some(i) = analytic.iter().position(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite analytic gradient for tensor {i}"
        )));
    }

    let mut rng = crate::rng::rng(opts.seed);
    let mut work = thetas.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
        tol: opts.tol,
    };
    for ti in 0..thetas.len() {
        let n = thetas[ti].len();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let orig = thetas[ti].data()[idx];
            work[ti].data_mut()[idx] = orig + opts.eps;
            let plus = evaluate(&f, &work)?.0;
            work[ti].data_mut()[idx] = orig - opts.eps;
            let minus = evaluate(&f, &work)?.0;
            work[ti].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[ti].data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((ti, idx, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let theta = Tensor::from_fn(&[5], |i| i as f64);
        let r = grad_check(|g, x| Ok(g.sum(x)), &theta, 1e-4, 1e-4).unwrap();
        assert!(r.passed());
        assert!(r.max_abs_error < 1e-9);
    }

    #[test]
    fn tanh_of_linear_map() {
        let mut rng = crate::rng::rng(5);
        let w = Tensor::randn(&[4, 3], 0.3, &mut rng);
        let x = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let r = grad_check(
            |g, w| {
                let x = g.constant(x.clone());
                let y = g.matmul(w, x)?;
                let t = g.tanh(y);
                Ok(g.sum(t))
            },
            &w,
            1e-4,
            1e-5,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn non_finite_objective_aborts() {
        let theta = Tensor::full(&[2], -1.0);
        let err = grad_check(
            |g, x| {
                let l = g.log(x);
                Ok(g.sum(l))
            },
            &theta,
            1e-4,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
