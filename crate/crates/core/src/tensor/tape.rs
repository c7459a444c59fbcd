//! Operation tape and reverse-mode backward pass.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::ops::{self, split_at_axis};
use super::{gemm, r, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: [usize; 6],
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        layout: (usize, usize, usize),
    },
    Relu(Var),
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Mask {
        x: Var,
        mask: Vec<T>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    MeanAxis {
        x: Var,
        layout: (usize, usize, usize),
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    CosineLoss {
        q: Var,
        z: Var,
        dq: Vec<T>,
        dz: Vec<T>,
    },
    SoftmaxCe {
        logits: Var,
        dlogits: Vec<T>,
    },
    SigmoidBce {
        logits: Var,
        dlogits: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<String>,
}

/// Records a forward computation for later differentiation.
///
/// Values are owned by the tape; parameters enter as leaves copied from their
/// [`Tensor`], tagged with a name so [`Gradients::param_grads`] can route
/// gradients back. A value that depends on no gradient-requiring leaf is
/// treated as a constant by the backward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    freeze_params: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::contract(format!("{op}: {detail}"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            freeze_params: false,
        }
    }

    /// While set, [`Tape::param`] records parameters as constants so no
    /// gradient is routed to them.
    pub fn set_freeze_params(&mut self, freeze: bool) {
        self.freeze_params = freeze;
    }

    pub fn params_frozen(&self) -> bool {
        self.freeze_params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    /// Records a leaf; it takes part in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a named parameter leaf.
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if self.freeze_params {
            return self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false);
        }
        let v = self.leaf(t);
        self.nodes[v.0].param = Some(name.to_string());
        v
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, op: &str, a: Var, b: Var, f: impl Fn(T, T) -> T, mk: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, mk, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).iter().map(|&x| x * c).collect();
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, c), self.rg(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum(a), self.rg(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s: T = self.value(a).iter().copied().sum();
        self.push(Vec::new(), vec![s / r(n as f64)], Op::Mean(a), self.rg(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        self.push(self.shape(a).to_vec(), value, Op::Relu(a), self.rg(a))
    }

    /// Affine map over the last axis: `y = x Wᵀ + b`, with `w` shaped
    /// `[out, in]`. Leading axes of `x` are treated as batch.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[1] {
            return Err(shape_err("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        let (out, inp) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err("linear", format!("bias {:?} vs out {out}", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / inp.max(1);
        let mut y = vec![T::zero(); rows * out];
        if let Some(b) = b {
            let bias = self.value(b);
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(false, true, rows, out, inp, T::one(), self.value(x), self.value(w), T::one(), &mut y);
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(shape, y, Op::Linear { x, w, b, rows, inp, out }, rg))
    }

    /// Stride-1 convolution with "same" zero padding (`k / 2`) over
    /// `[b, cin, h, w]` input and `[cout, cin, k, k]` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(shape_err("conv2d", format!("input {xs:?} vs kernel {ws:?}")));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err("conv2d", format!("bias {:?}", self.shape(b))));
        }
        let dims = [xs[0], xs[1], ws[0], xs[2], xs[3], ws[2]];
        let [bn, cin, cout, h, wd, k] = dims;
        let y = ops::conv2d_forward(self.value(x), self.value(w), self.value(b), bn, cin, cout, h, wd, k);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![bn, cout, h, wd], y, Op::Conv2d { x, w, b, dims }, rg))
    }

    fn bn_layout(&self, op: &str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(shape_err(op, format!("input rank {} < 2", xs.len())));
        }
        let layout = split_at_axis(xs, 1);
        if self.shape(gamma) != [layout.1] || self.shape(beta) != [layout.1] {
            return Err(shape_err(op, format!("affine params do not match {} channels", layout.1)));
        }
        Ok(layout)
    }

    /// Batch normalization over every axis except axis 1, using the batch's
    /// own statistics. Returns the output with the per-channel batch mean and
    /// biased variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let layout = self.bn_layout("batch_norm", x, gamma, beta)?;
        let (outer, c, inner) = layout;
        let n = outer * inner;
        let xv = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for o in 0..outer {
            for ch in 0..c {
                let s = &xv[(o * c + ch) * inner..(o * c + ch + 1) * inner];
                mean[ch] += s.iter().copied().sum::<T>();
            }
        }
        let nf: T = r(n as f64);
        mean.iter_mut().for_each(|m| *m /= nf);
        for o in 0..outer {
            for ch in 0..c {
                let s = &xv[(o * c + ch) * inner..(o * c + ch + 1) * inner];
                var[ch] += s.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    y[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        let v = self.push(
            shape,
            y,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: true, layout },
            rg,
        );
        Ok((v, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let layout = self.bn_layout("batch_norm", x, gamma, beta)?;
        let (outer, c, inner) = layout;
        if mean.len() != c || var.len() != c {
            return Err(shape_err("batch_norm", "running statistics length mismatch".into()));
        }
        let xv = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    y[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            y,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: false, layout },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2 over the last two axes of a rank-4
    /// input; odd trailing rows/columns are dropped.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(shape_err("max_pool2d", format!("input {xs:?} too small for 2x2 pooling")));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let cands = [
                        base + 2 * i * w + 2 * j,
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ];
                    let mut best = cands[0];
                    for &c in &cands[1..] {
                        if xv[c] > xv[best] {
                            best = c;
                        }
                    }
                    y.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![xs[0], xs[1], oh, ow], y, Op::MaxPool2d { x, argmax }, rg))
    }

    /// Inverted dropout: keeps each value with probability `keep` and scales
    /// survivors by `1 / keep`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, keep: f64, rng: &mut R) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::contract(format!("dropout keep probability {keep} outside (0, 1]")));
        }
        let scale: T = r(1.0 / keep);
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let y = self.value(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), y, Op::Mask { x, mask }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", format!("{:?} into {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, value, Op::Reshape(x), rg))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if axes.len() != xs.len() || axes.iter().any(|&a| a >= xs.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err("permute", format!("axes {axes:?} for rank {}", xs.len())));
        }
        let (y, shape) = ops::permute(self.value(x), &xs, axes);
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    fn reduce_shape(&self, op: &str, x: Var, axis: usize) -> Result<((usize, usize, usize), Vec<usize>)> {
        let xs = self.shape(x);
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(shape_err(op, format!("axis {axis} of {xs:?}")));
        }
        let mut out = xs.to_vec();
        out.remove(axis);
        Ok((split_at_axis(xs, axis), out))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (layout, shape) = self.reduce_shape("mean_axis", x, axis)?;
        let (outer, len, inner) = layout;
        let xv = self.value(x);
        let mut y = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut y[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        let lf: T = r(len as f64);
        y.iter_mut().for_each(|v| *v /= lf);
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::MeanAxis { x, layout }, rg))
    }

    /// Max over `axis`, removing it. Ties resolve to the first index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (layout, shape) = self.reduce_shape("max_axis", x, axis)?;
        let (outer, len, inner) = layout;
        let xv = self.value(x);
        let mut y = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                y.push(xv[best]);
                argmax.push(best);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(shape, y, Op::MaxAxis { x, argmax }, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(shape_err("concat", format!("{s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = xs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &ch) in xs.iter().zip(&chunks) {
                y.extend_from_slice(&self.value(v)[o * ch..(o + 1) * ch]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(shape, y, Op::Concat { xs: xs.to_vec(), outer, chunks }, rg))
    }

    /// Mean over rows of `2 - 2 cos(q_i, z_i)` for `[b, d]` inputs. Norms are
    /// clamped below at `eps`.
    pub fn cosine_loss(&mut self, q: Var, z: Var, eps: T) -> Result<Var> {
        self.same_shape("cosine_loss", q, z)?;
        let s = self.shape(q);
        if s.len() != 2 || s[0] == 0 {
            return Err(shape_err("cosine_loss", format!("expected non-empty [b, d], got {s:?}")));
        }
        let (b, d) = (s[0], s[1]);
        let (qv, zv) = (self.value(q), self.value(z));
        let two: T = r(2.0);
        let bf: T = r(b as f64);
        let mut loss = T::zero();
        let mut dq = vec![T::zero(); b * d];
        let mut dz = vec![T::zero(); b * d];
        for i in 0..b {
            let qi = &qv[i * d..(i + 1) * d];
            let zi = &zv[i * d..(i + 1) * d];
            let qn = qi.iter().map(|&v| v * v).sum::<T>().sqrt();
            let zn = zi.iter().map(|&v| v * v).sum::<T>().sqrt();
            let (nq, nz) = (qn.max(eps), zn.max(eps));
            let cos = qi.iter().zip(zi).map(|(&a, &c)| (a / nq) * (c / nz)).sum::<T>();
            loss += two - two * cos;
            // d cos / d q = (zhat - [|q| > eps] cos qhat) / nq
            let gscale = -two / bf;
            for j in 0..d {
                let qh = qi[j] / nq;
                let zh = zi[j] / nz;
                let pq = if qn > eps { cos * qh } else { T::zero() };
                let pz = if zn > eps { cos * zh } else { T::zero() };
                dq[i * d + j] = gscale * (zh - pq) / nq;
                dz[i * d + j] = gscale * (qh - pz) / nz;
            }
        }
        let rg = self.rg(q) || self.rg(z);
        Ok(self.push(Vec::new(), vec![loss / bf], Op::CosineLoss { q, z, dq, dz }, rg))
    }

    /// Mean softmax cross-entropy of `[n, c]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(shape_err("softmax_cross_entropy", format!("logits {s:?} vs {} targets", targets.len())));
        }
        let (n, c) = (s[0], s[1]);
        let lv = self.value(logits);
        let nf: T = r(n.max(1) as f64);
        let mut loss = T::zero();
        let mut dl = vec![T::zero(); n * c];
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lz = z.ln() + m;
            loss += lz - row[targets[i]];
            for j in 0..c {
                let p = (row[j] - lz).exp();
                let y = if j == targets[i] { T::one() } else { T::zero() };
                dl[i * c + j] = (p - y) / nf;
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(Vec::new(), vec![loss / nf], Op::SoftmaxCe { logits, dlogits: dl }, rg))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against `{0,1}` targets
    /// of the same shape.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() || lv.is_empty() {
            return Err(shape_err("sigmoid_bce", format!("{} logits vs {} targets", lv.len(), targets.len())));
        }
        let nf: T = r(lv.len() as f64);
        let mut loss = T::zero();
        let mut dl = Vec::with_capacity(lv.len());
        for (&x, &y) in lv.iter().zip(targets) {
            loss += x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
            let s = T::one() / (T::one() + (-x).exp());
            dl.push((s - y) / nf);
        }
        let rg = self.rg(logits);
        Ok(self.push(Vec::new(), vec![loss / nf], Op::SigmoidBce { logits, dlogits: dl }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.shape(loss).is_empty() && self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.check_finite(loss, "loss")?;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                leaves.insert(i, g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        let mut params: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for (&i, g) in &leaves {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(
                    self.nodes[i].param.clone().unwrap_or_else(|| "gradient".into()),
                ));
            }
            if let Some(name) = &self.nodes[i].param {
                match params.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    None => {
                        params.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        g(buf);
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(bv).for_each(|((d, &g), &y)| *d += g * y)
                });
                self.accumulate(grads, *b, |d| {
                    d.iter_mut().zip(g).zip(av).for_each(|((d, &g), &x)| *d += g * x)
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c));
            }
            Op::Sum(a) => self.accumulate(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n: T = r(self.value(*a).len().max(1) as f64);
                self.accumulate(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, |d| {
                    d.iter_mut()
                        .zip(g)
                        .zip(av)
                        .for_each(|((d, &g), &x)| if x > T::zero() { *d += g })
                });
            }
            &Op::Linear { x, w, b, rows, inp, out } => {
                self.accumulate(grads, x, |d| {
                    gemm(false, false, rows, inp, out, T::one(), g, self.value(w), T::one(), d)
                });
                self.accumulate(grads, w, |d| {
                    gemm(true, false, out, inp, rows, T::one(), g, self.value(x), T::one(), d)
                });
                if let Some(b) = b {
                    self.accumulate(grads, b, |d| {
                        for row in g.chunks(out) {
                            d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                }
            }
            &Op::Conv2d { x, w, b, dims } => {
                let [bn, cin, cout, h, wd, k] = dims;
                let (dx, dw, db) = ops::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    g,
                    bn,
                    cin,
                    cout,
                    h,
                    wd,
                    k,
                    self.rg(x),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, x, |d| d.iter_mut().zip(&dx).for_each(|(d, &v)| *d += v));
                }
                self.accumulate(grads, w, |d| d.iter_mut().zip(&dw).for_each(|(d, &v)| *d += v));
                self.accumulate(grads, b, |d| d.iter_mut().zip(&db).for_each(|(d, &v)| *d += v));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train, layout } => {
                let (outer, c, inner) = *layout;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                let gv = self.value(*gamma);
                let nf: T = r((outer * inner) as f64);
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            let k = gv[ch] * inv_std[ch];
                            for i in base..base + inner {
                                d[i] += if *train {
                                    k * (g[i] - dbeta[ch] / nf - xhat[i] * dgamma[ch] / nf)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                });
                self.accumulate(grads, *gamma, |d| d.iter_mut().zip(&dgamma).for_each(|(d, &v)| *d += v));
                self.accumulate(grads, *beta, |d| d.iter_mut().zip(&dbeta).for_each(|(d, &v)| *d += v));
            }
            Op::MaxPool2d { x, argmax } | Op::MaxAxis { x, argmax } => {
                self.accumulate(grads, *x, |d| {
                    argmax.iter().zip(g).for_each(|(&i, &g)| d[i] += g)
                });
            }
            Op::Mask { x, mask } => {
                self.accumulate(grads, *x, |d| {
                    d.iter_mut().zip(g).zip(mask).for_each(|((d, &g), &m)| *d += g * m)
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::Permute { x, axes } => {
                let (back, _) = ops::permute(g, &node.shape, &ops::invert_axes(axes));
                self.accumulate(grads, *x, |d| d.iter_mut().zip(&back).for_each(|(d, &g)| *d += g));
            }
            Op::MeanAxis { x, layout } => {
                let (outer, len, inner) = *layout;
                let lf: T = r(len as f64);
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut d[(o * len + l) * inner..(o * len + l + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &g)| *d += g / lf);
                        }
                    }
                });
            }
            Op::Concat { xs, outer, chunks } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (&v, &ch) in xs.iter().zip(chunks) {
                    self.accumulate(grads, v, |d| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + ch];
                            d[o * ch..(o + 1) * ch].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                        }
                    });
                    offset += ch;
                }
            }
            Op::CosineLoss { q, z, dq, dz } => {
                self.accumulate(grads, *q, |d| d.iter_mut().zip(dq).for_each(|(d, &v)| *d += g[0] * v));
                self.accumulate(grads, *z, |d| d.iter_mut().zip(dz).for_each(|(d, &v)| *d += g[0] * v));
            }
            Op::SoftmaxCe { logits, dlogits } | Op::SigmoidBce { logits, dlogits } => {
                self.accumulate(grads, *logits, |d| {
                    d.iter_mut().zip(dlogits).for_each(|(d, &v)| *d += g[0] * v)
                });
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Vec<T>>,
    params: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v.0).map(Vec::as_slice)
    }

    /// Gradients of named parameter leaves, summed over repeated uses of the
    /// same name.
    pub fn param_grads(&self) -> &BTreeMap<String, Vec<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.params.get(name).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap().with_requires_grad(true)
    }

    #[test]
    fn linear_scalar_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("w", &t(&[1], &[2.0]));
        let x = tape.constant(vec![1], vec![3.0]).unwrap();
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.sum(wx);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("w").unwrap(), &[3.0]);
        assert!(g.wrt(x).is_none());
    }

    #[test]
    fn relu_gradient_masks_negatives() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[-1.0, 5.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 5.0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1], &[3.0]));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let loss = tape.sum(z);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[7.0]);
    }

    #[test]
    fn repeated_param_names_sum() {
        let p = t(&[2], &[1.0, 2.0]);
        let mut tape = Tape::new();
        let a = tape.param("p", &p);
        let b = tape.param("p", &p);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param("p").unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn max_pool_picks_maximum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = tape.max_pool2d(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y), &[4.0]);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(vec![2], vec![0.0; 2]).unwrap();
        let b = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Contract(_))));
        let x = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let w = tape.constant(vec![4, 2], vec![0.0; 8]).unwrap();
        assert!(matches!(tape.linear(x, w, None), Err(Error::Contract(_))));
    }

    #[test]
    fn cosine_loss_reference_points() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let same = tape.constant(vec![1, 2], vec![3.0, 0.0]).unwrap();
        let orth = tape.constant(vec![1, 2], vec![0.0, 2.0]).unwrap();
        let opp = tape.constant(vec![1, 2], vec![-1.0, 0.0]).unwrap();
        for (z, expect) in [(same, 0.0), (orth, 2.0), (opp, 4.0)] {
            let l = tape.cosine_loss(q, z, 1e-12).unwrap();
            assert!((tape.value(l)[0] - expect).abs() < 1e-12);
        }
    }
}
