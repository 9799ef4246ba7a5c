use crate::error::{Error, Result};
use crate::kernel::{Graph, Tensor, Var};
use crate::rng::Rng;

/// Gated recurrent cell:
///
/// ```text
/// r = sigmoid(x W_r + h U_r + b_r)
/// h' = (1 - r) * h + r * tanh(x W_h + b_h)
/// ```
///
/// Weights are stored input-major (`W_r: [input, hidden]`), so batches are rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HGRNCell {
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub b_h: Tensor,
}

/// Tape handles for the cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct HgrnVars {
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub b_h: Var,
}

impl HGRNCell {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bx = 1.0 / (input as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        HGRNCell {
            w_r: Tensor::uniform(&[input, hidden], bx, rng),
            u_r: Tensor::uniform(&[hidden, hidden], bh, rng),
            b_r: Tensor::zeros(&[hidden]),
            w_h: Tensor::uniform(&[input, hidden], bx, rng),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        let ok = self.w_r.shape() == [i, h]
            && self.u_r.shape() == [h, h]
            && self.b_r.shape() == [h]
            && self.w_h.shape() == [i, h]
            && self.b_h.shape() == [h];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "inconsistent hgrn shapes: w_r {:?}, u_r {:?}, b_r {:?}, w_h {:?}, b_h {:?}",
                self.w_r.shape(),
                self.u_r.shape(),
                self.b_r.shape(),
                self.w_h.shape(),
                self.b_h.shape()
            )))
        }
    }

    pub fn bind_constants(&self, g: &mut Graph) -> HgrnVars {
        HgrnVars {
            w_r: g.constant(self.w_r.clone()),
            u_r: g.constant(self.u_r.clone()),
            b_r: g.constant(self.b_r.clone()),
            w_h: g.constant(self.w_h.clone()),
            b_h: g.constant(self.b_h.clone()),
        }
    }
}

/// One recurrence step on `[batch, input]` / `[batch, hidden]`.
pub fn hgrn_step_graph(g: &mut Graph, x: Var, h_prev: Var, p: &HgrnVars) -> Result<Var> {
    let (xs, hs) = (g.shape(x).to_vec(), g.shape(h_prev).to_vec());
    let (ws, us) = (g.shape(p.w_r), g.shape(p.u_r));
    if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] || xs[1] != ws[0] || hs[1] != us[0] {
        return Err(Error::shape(format!(
            "hgrn step x {xs:?}, h {hs:?} against W_r {ws:?}, U_r {us:?}"
        )));
    }
    let gx = g.matmul(x, p.w_r)?;
    let gh = g.matmul(h_prev, p.u_r)?;
    let pre = g.add(gx, gh)?;
    let pre = g.add_bias(pre, p.b_r)?;
    let r = g.sigmoid(pre);
    let cx = g.matmul(x, p.w_h)?;
    let cx = g.add_bias(cx, p.b_h)?;
    let cand = g.tanh(cx);
    let keep = g.affine(r, -1.0, 1.0);
    let old = g.mul(keep, h_prev)?;
    let new = g.mul(r, cand)?;
    g.add(old, new)
}

pub fn hgrn_step(x: &Tensor, h_prev: &Tensor, cell: &HGRNCell) -> Result<Tensor> {
    cell.validate()?;
    let mut g = Graph::new();
    let p = cell.bind_constants(&mut g);
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let out = hgrn_step_graph(&mut g, xv, hv, &p)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{grad_check_many, GradCheckOptions};
    use crate::rng::rng;
    use proptest::prelude::*;

    fn scalar_cell(w_r: f64, u_r: f64, b_r: f64, w_h: f64) -> HGRNCell {
        HGRNCell {
            w_r: Tensor::new(&[1, 1], vec![w_r]).unwrap(),
            u_r: Tensor::new(&[1, 1], vec![u_r]).unwrap(),
            b_r: Tensor::new(&[1], vec![b_r]).unwrap(),
            w_h: Tensor::new(&[1, 1], vec![w_h]).unwrap(),
            b_h: Tensor::zeros(&[1]),
        }
    }

    fn s(v: f64) -> Tensor {
        Tensor::new(&[1, 1], vec![v]).unwrap()
    }

    #[test]
    fn scalar_hand_evaluation() {
        let h = hgrn_step(&s(1.0), &s(0.0), &scalar_cell(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((h.item() - 0.5 * 1f64.tanh()).abs() < 1e-12);
        assert!((h.item() - 0.38080).abs() < 1e-5);
    }

    #[test]
    fn closed_gate_copies_history() {
        let h = hgrn_step(&s(1.0), &s(0.7), &scalar_cell(0.0, 0.0, -1e3, 1.0)).unwrap();
        assert_eq!(h.item(), 0.7);
    }

    #[test]
    fn open_gate_overwrites_history() {
        let h = hgrn_step(&s(0.4), &s(0.7), &scalar_cell(0.0, 0.0, 1e3, 2.0)).unwrap();
        assert!((h.item() - 0.8f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cell = HGRNCell::new(3, 4, &mut rng(1));
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            hgrn_step(&x, &Tensor::zeros(&[2, 5]), &cell),
            Err(Error::Shape(_))
        ));
        assert!(hgrn_step(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 4]), &cell).is_err());
    }

    #[test]
    fn passes_grad_check() {
        let mut r = rng(2);
        let cell = HGRNCell {
            b_r: Tensor::randn(&[4], 0.5, &mut r),
            b_h: Tensor::randn(&[4], 0.5, &mut r),
            ..HGRNCell::new(3, 4, &mut r)
        };
        let x1 = Tensor::randn(&[2, 3], 1.0, &mut r);
        let x2 = Tensor::randn(&[2, 3], 1.0, &mut r);
        let thetas = [
            cell.w_r.clone(),
            cell.u_r.clone(),
            cell.b_r.clone(),
            cell.w_h.clone(),
            cell.b_h.clone(),
        ];
        // Two unrolled steps so the recurrent weight sees a nonzero state.
        let report = grad_check_many(
            |g, v| {
                let p = HgrnVars {
                    w_r: v[0],
                    u_r: v[1],
                    b_r: v[2],
                    w_h: v[3],
                    b_h: v[4],
                };
                let h0 = g.constant(Tensor::zeros(&[2, 4]));
                let a = g.constant(x1.clone());
                let b = g.constant(x2.clone());
                let h1 = hgrn_step_graph(g, a, h0, &p)?;
                let h2 = hgrn_step_graph(g, b, h1, &p)?;
                let sq = g.mul(h2, h2)?;
                Ok(g.sum(sq))
            },
            &thetas,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    proptest! {
        #[test]
        fn state_stays_bounded(seed in 0u64..500, hscale in 0.0f64..3.0) {
            let mut r = rng(seed);
            let cell = HGRNCell::new(3, 5, &mut r);
            let x = Tensor::randn(&[2, 3], 2.0, &mut r);
            let h = Tensor::randn(&[2, 5], hscale, &mut r);
            let out = hgrn_step(&x, &h, &cell).unwrap();
            for b in 0..2 {
                let bound = h.row(b).iter().fold(1.0f64, |m, v| m.max(v.abs()));
                for v in out.row(b) {
                    prop_assert!(v.abs() <= bound + 1e-12);
                }
            }
        }
    }
}
