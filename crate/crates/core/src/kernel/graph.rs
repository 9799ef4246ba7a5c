use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How spike nonlinearities behave.
///
/// `Hard` emits binary spikes forward and uses the fast-sigmoid surrogate
/// `1 / (alpha |v| + 1)^2` backward. `Soft` replaces the forward pass by the
/// smooth `0.5 v / (alpha |v| + 1) + 0.5` and differentiates it exactly, which
/// makes whole networks checkable with finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Conv2d(Box<ConvOp>),
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    L2Normalize {
        x: Var,
        eps: f64,
    },
    Spike {
        u: Var,
        theta: f64,
        alpha: f64,
        mode: SpikeMode,
    },
    LifIntegrate {
        u: Var,
        i: Var,
        decay: f64,
        gain: f64,
    },
    LifReset {
        u: Var,
        s: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    SupCon {
        z: Var,
        labels: Vec<usize>,
        tau: f64,
    },
}

#[derive(Debug, Clone)]
struct ConvOp {
    x: Var,
    k: Var,
    stride: usize,
    padding: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Eager reverse-mode tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn stable_softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn im2col(x: &[f64], g: &ConvGeom, stride: usize, padding: usize, cols: &mut [f64]) {
    let spatial = g.ho * g.wo;
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.ho {
                    let y = (oy * stride + i) as isize - padding as isize;
                    for ox in 0..g.wo {
                        let xx = (ox * stride + j) as isize - padding as isize;
                        dst[oy * g.wo + ox] =
                            if y >= 0 && (y as usize) < g.h && xx >= 0 && (xx as usize) < g.w {
                                x[(c * g.h + y as usize) * g.w + xx as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, stride: usize, padding: usize, dx: &mut [f64]) {
    let spatial = g.ho * g.wo;
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..g.ho {
                    let y = (oy * stride + i) as isize - padding as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let xx = (ox * stride + j) as isize - padding as isize;
                        if xx >= 0 && (xx as usize) < g.w {
                            dx[(c * g.h + y as usize) * g.w + xx as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copy of `x` cut off from the tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs = self.grad_of(parents);
        self.push(value, op, needs)
    }

    fn zip_map(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.record(out, op, &[a, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        self.record(out, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of several same-shaped values, recorded as one node.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("add_n of nothing"))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            same_shape("add_n", &acc, t)?;
            acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
        }
        Ok(self.record(acc, Op::AddN(parts.to_vec()), parts))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = *tx.shape().last().unwrap_or(&1);
        if tb.rank() != 1 || tb.len() != n {
            return Err(Error::shape(format!(
                "add_bias: bias {:?} for input {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(v, b)| *v += b);
        }
        Ok(self.record(out, Op::AddBias(x, b), &[x, b]))
    }

    /// Adds a per-channel bias to an `[N, C, H, W]` (or `[C, H, W]`) tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let r = tx.rank();
        if !(r == 3 || r == 4) || tb.rank() != 1 || tb.len() != tx.shape()[r - 3] {
            return Err(Error::shape(format!(
                "add_channel_bias: bias {:?} for input {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let c = tb.len();
        let plane = tx.shape()[r - 2] * tx.shape()[r - 1];
        let mut out = tx.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bias = tb.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        Ok(self.record(out, Op::AddChannelBias(x, b), &[x, b]))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul needs matrices, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, n) = if trans_b {
            (tb.shape()[1], tb.shape()[0])
        } else {
            (tb.shape()[0], tb.shape()[1])
        };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions {:?} x {:?}{}",
                ta.shape(),
                tb.shape(),
                if trans_b { "^T" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, ta.data(), false, tb.data(), trans_b, 0.0, &mut out);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.record(out, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `[m, k] x [n, k]^T -> [m, n]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// 2-D cross-correlation. `x` is `[N, C, H, W]` or `[C, H, W]`, `k` is
    /// `[C_out, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(k));
        let batched = match tx.rank() {
            4 => true,
            3 => false,
            _ => return Err(Error::shape(format!("conv2d input {:?}", tx.shape()))),
        };
        let xs = tx.shape();
        let (batch, c_in, h, w) = if batched {
            (xs[0], xs[1], xs[2], xs[3])
        } else {
            (1, xs[0], xs[1], xs[2])
        };
        if tk.rank() != 4 || tk.shape()[1] != c_in {
            return Err(Error::shape(format!(
                "conv2d kernel {:?} for input {:?}",
                tk.shape(),
                xs
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        let (c_out, kh, kw) = (tk.shape()[0], tk.shape()[2], tk.shape()[3]);
        let out_dim = |len: usize, kern: usize| -> Result<usize> {
            let span = (len + 2 * padding)
                .checked_sub(kern)
                .ok_or_else(|| Error::shape("conv2d kernel larger than padded input"))?;
            if span % stride != 0 {
                return Err(Error::shape(format!(
                    "conv2d output size ({len} + 2*{padding} - {kern}) / {stride} is not integral"
                )));
            }
            Ok(span / stride + 1)
        };
        let (ho, wo) = (out_dim(h, kh)?, out_dim(w, kw)?);
        let geom = ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho,
            wo,
        };
        let ckk = c_in * kh * kw;
        let spatial = ho * wo;
        let mut cols = vec![0.0; ckk * spatial];
        let mut out = vec![0.0; batch * c_out * spatial];
        for n in 0..batch {
            let xn = &tx.data()[n * c_in * h * w..(n + 1) * c_in * h * w];
            im2col(xn, &geom, stride, padding, &mut cols);
            gemm(
                c_out,
                ckk,
                spatial,
                1.0,
                tk.data(),
                false,
                &cols,
                false,
                0.0,
                &mut out[n * c_out * spatial..(n + 1) * c_out * spatial],
            );
        }
        let shape: Vec<usize> = if batched {
            vec![batch, c_out, ho, wo]
        } else {
            vec![c_out, ho, wo]
        };
        let out = Tensor::new(&shape, out)?;
        let op = Op::Conv2d(Box::new(ConvOp {
            x,
            k,
            stride,
            padding,
            geom,
        }));
        Ok(self.record(out, op, &[x, k]))
    }

    /// Non-overlapping `size x size` max pooling over the last two axes
    /// (floor semantics for ragged edges). Ties go to the first element.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let tx = self.value(x);
        let r = tx.rank();
        if r < 2 || size == 0 {
            return Err(Error::shape(format!("max_pool2d input {:?}", tx.shape())));
        }
        let (h, w) = (tx.shape()[r - 2], tx.shape()[r - 1]);
        let (ho, wo) = (h / size, w / size);
        let planes = tx.len() / (h * w);
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (oy * size + dy) * w + ox * size + dx;
                            if tx.data()[idx] > tx.data()[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(tx.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        let out = Tensor::new(&shape, out)?;
        Ok(self.record(out, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::shape(format!("softmax axis {axis} for {:?}", tx.shape())));
        }
        debug_assert!(
            tx.data().iter().all(|v| !v.is_nan()),
            "softmax input contains NaN"
        );
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let mut out = tx.clone();
        let mut row = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (a, r) in row.iter_mut().enumerate() {
                    *r = tx.data()[(o * len + a) * inner + i];
                }
                stable_softmax(&mut row);
                for (a, r) in row.iter().enumerate() {
                    out.data_mut()[(o * len + a) * inner + i] = *r;
                }
            }
        }
        Ok(self.record(out, Op::Softmax { x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::shape(format!("sum_axis {axis} for {:?}", tx.shape())));
        }
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += tx.data()[(o * len + a) * inner + i];
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, out)?;
        Ok(self.record(out, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::shape(format!("mean_axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len.max(1) as f64))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!("concat {s:?} with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, out)?;
        Ok(self.record(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.record(out, Op::Reshape(x), &[x]))
    }

    /// Scales every row (last axis) to unit length: `x / sqrt(|x|^2 + eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let tx = self.value(x);
        let n = *tx.shape().last().unwrap_or(&1);
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            let norm = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        self.record(out, Op::L2Normalize { x, eps }, &[x])
    }

    /// Spike nonlinearity applied to `u - theta`.
    pub fn spike(&mut self, u: Var, theta: f64, alpha: f64, mode: SpikeMode) -> Var {
        let out = self.value(u).map(|v| spike_forward(v - theta, alpha, mode));
        self.record(
            out,
            Op::Spike {
                u,
                theta,
                alpha,
                mode,
            },
            &[u],
        )
    }

    /// `decay * u + gain * i + shift`, the Euler step of the membrane equation.
    pub fn lif_integrate(&mut self, u: Var, i: Var, decay: f64, gain: f64, shift: f64) -> Result<Var> {
        let (tu, ti) = (self.value(u), self.value(i));
        same_shape("lif_integrate", tu, ti)?;
        let data = tu
            .data()
            .iter()
            .zip(ti.data())
            .map(|(&a, &b)| decay * a + gain * b + shift)
            .collect();
        let out = Tensor::new(tu.shape(), data)?;
        Ok(self.record(out, Op::LifIntegrate { u, i, decay, gain }, &[u, i]))
    }

    /// Reset toward `rest` where `s` spiked: `u (1 - s) + rest s`.
    /// The spike enters as a constant, so no gradient flows through the reset.
    pub fn lif_reset(&mut self, u: Var, s: Var, rest: f64) -> Result<Var> {
        let (tu, ts) = (self.value(u), self.value(s));
        same_shape("lif_reset", tu, ts)?;
        let data = tu
            .data()
            .iter()
            .zip(ts.data())
            .map(|(&a, &sp)| a * (1.0 - sp) + rest * sp)
            .collect();
        let out = Tensor::new(tu.shape(), data)?;
        Ok(self.record(out, Op::LifReset { u, s }, &[u]))
    }

    /// Mean softmax cross-entropy of `[B, n]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross_entropy logits {:?} for {} labels",
                t.shape(),
                labels.len()
            )));
        }
        let n = t.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::shape(format!("label {bad} out of {n} classes")));
        }
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = t.row(b);
            loss += log_sum_exp(row.iter().copied()) - row[y];
        }
        loss /= labels.len().max(1) as f64;
        Ok(self.record(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Supervised contrastive loss on already-normalized rows `z`.
    ///
    /// For each anchor `i` with at least one positive:
    /// `-log(sum_{j in P(i)} exp(z_i.z_j/tau) / sum_{k != i} exp(z_i.z_k/tau))`,
    /// averaged over those anchors. Anchors without positives are skipped.
    pub fn supcon(&mut self, z: Var, labels: &[usize], tau: f64) -> Result<Var> {
        let t = self.value(z);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "supcon features {:?} for {} labels",
                t.shape(),
                labels.len()
            )));
        }
        let loss = supcon_forward(t, labels, tau).0;
        Ok(self.record(
            Tensor::scalar(loss),
            Op::SupCon {
                z,
                labels: labels.to_vec(),
                tau,
            },
            &[z],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(buf.data_mut());
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accum(grads, *b, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.accum(grads, *p, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                }
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accum(grads, *b, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accum(grads, *a, |d| {
                    for ((x, y), w) in d.iter_mut().zip(gd).zip(vb) {
                        *x += y * w;
                    }
                });
                self.accum(grads, *b, |d| {
                    for ((x, y), w) in d.iter_mut().zip(gd).zip(va) {
                        *x += y * w;
                    }
                });
            }
            Op::Affine(x, scale) => {
                self.accum(grads, *x, |d| {
                    d.iter_mut().zip(gd).for_each(|(a, y)| *a += scale * y)
                });
            }
            Op::AddBias(x, b) => {
                self.accum(grads, *x, |d| d.iter_mut().zip(gd).for_each(|(a, y)| *a += y));
                let n = self.value(*b).len();
                self.accum(grads, *b, |d| {
                    for row in gd.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                    }
                });
            }
            Op::AddChannelBias(x, b) => {
                self.accum(grads, *x, |d| d.iter_mut().zip(gd).for_each(|(a, y)| *a += y));
                let s = out.shape();
                let r = s.len();
                let plane = s[r - 2] * s[r - 1];
                let c = self.value(*b).len();
                self.accum(grads, *b, |d| {
                    for (i, chunk) in gd.chunks(plane).enumerate() {
                        d[i % c] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = out.shape()[1];
                // dA = dC * op(B)^T
                self.accum(grads, *a, |d| {
                    gemm(m, n, k, 1.0, gd, false, tb.data(), !trans_b, 1.0, d);
                });
                self.accum(grads, *b, |d| {
                    if *trans_b {
                        // B is [n, k]: dB = dC^T * A
                        gemm(n, m, k, 1.0, gd, true, ta.data(), false, 1.0, d);
                    } else {
                        // dB = A^T * dC
                        gemm(k, m, n, 1.0, ta.data(), true, gd, false, 1.0, d);
                    }
                });
            }
            Op::Conv2d(conv) => self.conv_backward(conv, gd, grads),
            Op::MaxPool2d { x, argmax } => {
                self.accum(grads, *x, |d| {
                    for (&src, y) in argmax.iter().zip(gd) {
                        d[src] += y;
                    }
                });
            }
            Op::Sigmoid(x) => {
                self.accum(grads, *x, |d| {
                    for ((a, y), s) in d.iter_mut().zip(gd).zip(out.data()) {
                        *a += y * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(x) => {
                self.accum(grads, *x, |d| {
                    for ((a, y), t) in d.iter_mut().zip(gd).zip(out.data()) {
                        *a += y * (1.0 - t * t);
                    }
                });
            }
            Op::Exp(x) => {
                self.accum(grads, *x, |d| {
                    for ((a, y), e) in d.iter_mut().zip(gd).zip(out.data()) {
                        *a += y * e;
                    }
                });
            }
            Op::Log(x) => {
                let vx = self.value(*x).data();
                self.accum(grads, *x, |d| {
                    for ((a, y), v) in d.iter_mut().zip(gd).zip(vx) {
                        *a += y / v;
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let s = out.data();
                self.accum(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let dot: f64 = (0..len).map(|a| gd[at(a)] * s[at(a)]).sum();
                            for a in 0..len {
                                d[at(a)] += s[at(a)] * (gd[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let y = gd[0];
                self.accum(grads, *x, |d| d.iter_mut().for_each(|a| *a += y));
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.value(*x).shape(), *axis);
                self.accum(grads, *x, |d| {
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                d[(o * len + a) * inner + i] += gd[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let total = out.shape()[*axis];
                let (outer, _, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    self.accum(grads, *p, |d| {
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            d[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, y)| *a += y);
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(x) => {
                self.accum(grads, *x, |d| d.iter_mut().zip(gd).for_each(|(a, y)| *a += y));
            }
            Op::L2Normalize { x, eps } => {
                let vx = self.value(*x).data();
                let n = *out.shape().last().unwrap_or(&1);
                self.accum(grads, *x, |d| {
                    for ((drow, grow), (xrow, yrow)) in d
                        .chunks_mut(n)
                        .zip(gd.chunks(n))
                        .zip(vx.chunks(n).zip(out.data().chunks(n)))
                    {
                        let norm = (xrow.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((a, gy), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *a += (gy - y * dot) / norm;
                        }
                    }
                });
            }
            Op::Spike {
                u,
                theta,
                alpha,
                mode,
            } => {
                let vu = self.value(*u).data();
                self.accum(grads, *u, |d| {
                    for ((a, y), v) in d.iter_mut().zip(gd).zip(vu) {
                        *a += y * spike_backward(v - theta, *alpha, *mode);
                    }
                });
            }
            Op::LifIntegrate { u, i, decay, gain } => {
                self.accum(grads, *u, |d| {
                    d.iter_mut().zip(gd).for_each(|(a, y)| *a += decay * y)
                });
                self.accum(grads, *i, |d| {
                    d.iter_mut().zip(gd).for_each(|(a, y)| *a += gain * y)
                });
            }
            Op::LifReset { u, s } => {
                let vs = self.value(*s).data();
                self.accum(grads, *u, |d| {
                    for ((a, y), sp) in d.iter_mut().zip(gd).zip(vs) {
                        *a += y * (1.0 - sp);
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let t = self.value(*logits);
                let n = t.shape()[1];
                let scale = gd[0] / labels.len().max(1) as f64;
                self.accum(grads, *logits, |d| {
                    for (b, &y) in labels.iter().enumerate() {
                        let mut p = t.row(b).to_vec();
                        stable_softmax(&mut p);
                        p[y] -= 1.0;
                        for (a, v) in d[b * n..(b + 1) * n].iter_mut().zip(&p) {
                            *a += scale * v;
                        }
                    }
                });
            }
            Op::SupCon { z, labels, tau } => {
                let t = self.value(*z);
                let dz = supcon_backward(t, labels, *tau, gd[0]);
                self.accum(grads, *z, |d| d.iter_mut().zip(&dz).for_each(|(a, y)| *a += y));
            }
        }
    }

    fn conv_backward(&self, conv: &ConvOp, gd: &[f64], grads: &mut [Option<Tensor>]) {
        let g = &conv.geom;
        let (tx, tk) = (self.value(conv.x), self.value(conv.k));
        let ckk = g.c_in * g.kh * g.kw;
        let spatial = g.ho * g.wo;
        let in_len = g.c_in * g.h * g.w;
        let need_x = self.nodes[conv.x.0].needs_grad;
        let need_k = self.nodes[conv.k.0].needs_grad;
        let mut cols = vec![0.0; ckk * spatial];
        let mut dcols = vec![0.0; ckk * spatial];
        let mut dk = vec![0.0; tk.len()];
        let mut dx = vec![0.0; tx.len()];
        for n in 0..g.batch {
            let gout = &gd[n * g.c_out * spatial..(n + 1) * g.c_out * spatial];
            if need_k {
                im2col(
                    &tx.data()[n * in_len..(n + 1) * in_len],
                    g,
                    conv.stride,
                    conv.padding,
                    &mut cols,
                );
                gemm(g.c_out, spatial, ckk, 1.0, gout, false, &cols, true, 1.0, &mut dk);
            }
            if need_x {
                gemm(
                    ckk,
                    g.c_out,
                    spatial,
                    1.0,
                    tk.data(),
                    true,
                    gout,
                    false,
                    0.0,
                    &mut dcols,
                );
                col2im(
                    &dcols,
                    g,
                    conv.stride,
                    conv.padding,
                    &mut dx[n * in_len..(n + 1) * in_len],
                );
            }
        }
        self.accum(grads, conv.k, |d| {
            d.iter_mut().zip(&dk).for_each(|(a, y)| *a += y)
        });
        self.accum(grads, conv.x, |d| {
            d.iter_mut().zip(&dx).for_each(|(a, y)| *a += y)
        });
    }
}

pub(crate) fn spike_forward(v: f64, alpha: f64, mode: SpikeMode) -> f64 {
    match mode {
        SpikeMode::Hard => {
            if v >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        SpikeMode::Soft => 0.5 * v / (alpha * v.abs() + 1.0) + 0.5,
    }
}

pub(crate) fn spike_backward(v: f64, alpha: f64, mode: SpikeMode) -> f64 {
    let denom = alpha * v.abs() + 1.0;
    match mode {
        SpikeMode::Hard => 1.0 / (denom * denom),
        SpikeMode::Soft => 0.5 / (denom * denom),
    }
}

fn similarities(z: &Tensor, tau: f64) -> Vec<f64> {
    let (n, d) = (z.shape()[0], z.shape()[1]);
    let mut sim = vec![0.0; n * n];
    gemm(n, d, n, 1.0 / tau, z.data(), false, z.data(), true, 0.0, &mut sim);
    sim
}

/// Returns the loss and the number of anchors that had a positive.
fn supcon_forward(z: &Tensor, labels: &[usize], tau: f64) -> (f64, usize) {
    let n = labels.len();
    let sim = similarities(z, tau);
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let pos = (0..n).filter(|&j| j != i && labels[j] == labels[i]);
        if pos.clone().next().is_none() {
            continue;
        }
        let all = (0..n).filter(|&k| k != i).map(|k| row[k]);
        total += log_sum_exp(all) - log_sum_exp(pos.map(|j| row[j]));
        anchors += 1;
    }
    if anchors == 0 {
        (0.0, 0)
    } else {
        (total / anchors as f64, anchors)
    }
}

fn supcon_backward(z: &Tensor, labels: &[usize], tau: f64, upstream: f64) -> Vec<f64> {
    let (n, d) = (z.shape()[0], z.shape()[1]);
    let anchors = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && labels[j] == labels[i]))
        .count();
    let mut dz = vec![0.0; n * d];
    if anchors == 0 {
        return dz;
    }
    let sim = similarities(z, tau);
    // dL/dsim, then sim = z z^T / tau.
    let mut dsim = vec![0.0; n * n];
    let scale = upstream / anchors as f64;
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let is_pos = |j: usize| j != i && labels[j] == labels[i];
        if !(0..n).any(is_pos) {
            continue;
        }
        let lse_all = log_sum_exp((0..n).filter(|&k| k != i).map(|k| row[k]));
        let lse_pos = log_sum_exp((0..n).filter(|&j| is_pos(j)).map(|j| row[j]));
        for k in 0..n {
            if k == i {
                continue;
            }
            let mut v = (row[k] - lse_all).exp();
            if is_pos(k) {
                v -= (row[k] - lse_pos).exp();
            }
            dsim[i * n + k] = scale * v;
        }
    }
    // dz = (dsim + dsim^T) z / tau
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            sym[i * n + k] = dsim[i * n + k] + dsim[k * n + i];
        }
    }
    gemm(n, n, d, 1.0 / tau, &sym, false, z.data(), false, 0.0, &mut dz);
    dz
}
