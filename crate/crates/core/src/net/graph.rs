//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; backward walks it once in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::view::SplatPlan;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Probability clamp applied inside the losses.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLossParams {
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self {
            alpha_pos: 2.0,
            alpha_neg: 1.0,
            gamma: 0.25,
        }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_pos", self.alpha_pos),
            ("alpha_neg", self.alpha_neg),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "focal",
                    format!("{name} must be a finite non-negative number"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        outer: usize,
        axis: usize,
        inner: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, f64),
    LiftSplat {
        features: Var,
        depth: Var,
        plan: Arc<SplatPlan>,
    },
    Focal {
        probs: Var,
        targets: Arc<[u8]>,
        params: FocalLossParams,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<[u8]>,
        weights: Arc<[f64]>,
        batch: usize,
        classes: usize,
    },
    Project {
        x: Var,
        coeffs: Arc<[f64]>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Geometry of a stride-1, zero-padded convolution over `(batch, C, D, H, W)`.
/// 2D convolutions use `D = 1` and a kernel depth of 1.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    spatial: [usize; 3],
    kernel: [usize; 3],
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.spatial.iter().product()
    }

    fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    /// For a kernel offset `k` along an axis of length `n`, the range of
    /// output coordinates whose input tap `o + k - pad` stays inside.
    #[inline]
    fn valid(n: usize, k: usize, pad: usize) -> (usize, usize, isize) {
        let shift = k as isize - pad as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (n as isize - shift).min(n as isize).max(0) as usize;
        (lo, hi, shift)
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], dims: &ConvDims) -> Vec<f64> {
    let [sd, sh, sw] = dims.spatial;
    let [kd, kh, kw] = dims.kernel;
    let plane = dims.plane();
    let klen = dims.kernel_len();
    let mut out = vec![0.0; dims.batch * dims.c_out * plane];
    for n in 0..dims.batch {
        for co in 0..dims.c_out {
            let obase = (n * dims.c_out + co) * plane;
            out[obase..obase + plane].iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..dims.c_in {
                let ibase = (n * dims.c_in + ci) * plane;
                let wbase = (co * dims.c_in + ci) * klen;
                for a in 0..kd {
                    let (d0, d1, ds) = ConvDims::valid(sd, a, kd / 2);
                    for bb in 0..kh {
                        let (h0, h1, hs) = ConvDims::valid(sh, bb, kh / 2);
                        for c in 0..kw {
                            let (w0, w1, ws) = ConvDims::valid(sw, c, kw / 2);
                            if w0 >= w1 {
                                continue;
                            }
                            let wv = w[wbase + (a * kh + bb) * kw + c];
                            for d in d0..d1 {
                                let di = (d as isize + ds) as usize;
                                for h in h0..h1 {
                                    let hi = (h as isize + hs) as usize;
                                    let orow = obase + (d * sh + h) * sw;
                                    let irow = ibase + (di * sh + hi) * sw;
                                    let o = &mut out[orow + w0..orow + w1];
                                    let i0 = (irow as isize + w0 as isize + ws) as usize;
                                    let i = &x[i0..i0 + (w1 - w0)];
                                    for (ov, iv) in o.iter_mut().zip(i) {
                                        *ov += wv * iv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns gradients for (input, weight, bias).
fn conv_backward(x: &[f64], w: &[f64], g: &[f64], dims: &ConvDims) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [sd, sh, sw] = dims.spatial;
    let [kd, kh, kw] = dims.kernel;
    let plane = dims.plane();
    let klen = dims.kernel_len();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; dims.c_out];
    for n in 0..dims.batch {
        for co in 0..dims.c_out {
            let obase = (n * dims.c_out + co) * plane;
            gb[co] += g[obase..obase + plane].iter().sum::<f64>();
            for ci in 0..dims.c_in {
                let ibase = (n * dims.c_in + ci) * plane;
                let wbase = (co * dims.c_in + ci) * klen;
                for a in 0..kd {
                    let (d0, d1, ds) = ConvDims::valid(sd, a, kd / 2);
                    for bb in 0..kh {
                        let (h0, h1, hs) = ConvDims::valid(sh, bb, kh / 2);
                        for c in 0..kw {
                            let (w0, w1, ws) = ConvDims::valid(sw, c, kw / 2);
                            if w0 >= w1 {
                                continue;
                            }
                            let widx = wbase + (a * kh + bb) * kw + c;
                            let wv = w[widx];
                            let mut acc = 0.0;
                            for d in d0..d1 {
                                let di = (d as isize + ds) as usize;
                                for h in h0..h1 {
                                    let hi = (h as isize + hs) as usize;
                                    let orow = obase + (d * sh + h) * sw;
                                    let irow = ibase + (di * sh + hi) * sw;
                                    let i0 = (irow as isize + w0 as isize + ws) as usize;
                                    let go = &g[orow + w0..orow + w1];
                                    let xi = &x[i0..i0 + (w1 - w0)];
                                    let gxi = &mut gx[i0..i0 + (w1 - w0)];
                                    for ((gv, xv), gxv) in go.iter().zip(xi).zip(gxi.iter_mut()) {
                                        acc += gv * xv;
                                        *gxv += wv * gv;
                                    }
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-element focal term and its derivative with respect to `p_t`.
#[inline]
fn focal_term(p_t: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p_t;
    let ln_p = p_t.ln();
    let mod_ = q.powf(gamma);
    let loss = -alpha * mod_ * ln_p;
    let dmod = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
    let dloss = alpha * dmod * ln_p - alpha * mod_ / p_t;
    (loss, dloss)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient after [`Graph::backward`], shaped like the value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, dims: ConvDims, name: &'static str) -> Result<Var> {
        let out = conv_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &dims);
        let mut shape = vec![dims.batch, dims.c_out];
        if name == "conv3d" {
            shape.extend_from_slice(&dims.spatial);
            shape.remove(0);
        } else {
            shape.extend_from_slice(&dims.spatial[1..]);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::Conv { x, w, b, dims }, rg, name)
    }

    fn check_kernel(
        &self,
        w: Var,
        b: Var,
        c_in: usize,
        spatial_dims: usize,
        op: &'static str,
    ) -> Result<(usize, [usize; 3])> {
        let ws = self.shape(w);
        if ws.len() != 2 + spatial_dims || ws[1] != c_in {
            return Err(Error::shape(
                op,
                format!("weight {ws:?} does not match {c_in} input channels"),
            ));
        }
        let k = &ws[2..];
        if k.iter().any(|&v| v % 2 == 0) {
            return Err(Error::shape(op, format!("kernel {k:?} must be odd")));
        }
        let c_out = ws[0];
        if self.shape(b) != [c_out] {
            return Err(Error::shape(
                op,
                format!("bias {:?}, expected [{c_out}]", self.shape(b)),
            ));
        }
        let kernel = if spatial_dims == 2 {
            [1, k[0], k[1]]
        } else {
            [k[0], k[1], k[2]]
        };
        Ok((c_out, kernel))
    }

    /// `x: (N, C_in, H, W)`, `w: (C_out, C_in, k, k)`, `b: (C_out)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {xs:?} is not (N, C, H, W)")));
        }
        let (c_out, kernel) = self.check_kernel(w, b, xs[1], 2, "conv2d")?;
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            c_out,
            spatial: [1, xs[2], xs[3]],
            kernel,
        };
        self.conv(x, w, b, dims, "conv2d")
    }

    /// `x: (C_in, D, H, W)`, `w: (C_out, C_in, k, k, k)`, `b: (C_out)`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("conv3d", format!("input {xs:?} is not (C, D, H, W)")));
        }
        let (c_out, kernel) = self.check_kernel(w, b, xs[0], 3, "conv3d")?;
        let dims = ConvDims {
            batch: 1,
            c_in: xs[0],
            c_out,
            spatial: [xs[1], xs[2], xs[3]],
            kernel,
        };
        self.conv(x, w, b, dims, "conv3d")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a.max(0.0)).collect())?;
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| sigmoid(a)).collect())?;
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg, "sigmoid")
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if axis >= s.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    out[at(k)] /= sum;
                }
            }
        }
        let out = Tensor::new(s.to_vec(), out)?;
        let rg = self.rg(x);
        self.push(
            out,
            Op::Softmax {
                x,
                outer,
                axis: len,
                inner,
            },
            rg,
            "softmax",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
        )?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect())?;
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg, "scale")
    }

    /// Depth-weighted splat of `(N, C, h, w)` features into `(C, H, W)`.
    pub fn lift_splat(&mut self, features: Var, depth: Var, plan: Arc<SplatPlan>) -> Result<Var> {
        let out = plan.forward(self.value(features), self.value(depth))?;
        let rg = self.rg(features) || self.rg(depth);
        self.push(out, Op::LiftSplat { features, depth, plan }, rg, "lift_splat")
    }

    /// Mean focal loss over every element of `probs` against 0/1 `targets`
    /// of equal length. With a leading batch axis this is the batch mean of
    /// the per-sample voxel means.
    pub fn focal_loss(&mut self, probs: Var, targets: Arc<[u8]>, params: FocalLossParams) -> Result<Var> {
        params.validate()?;
        let p = self.value(probs);
        if p.len() != targets.len() || p.is_empty() {
            return Err(Error::shape(
                "focal_loss",
                format!("{} predictions vs {} targets", p.len(), targets.len()),
            ));
        }
        let mut total = 0.0;
        for (&pv, &t) in p.data().iter().zip(targets.iter()) {
            let pc = pv.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let (p_t, alpha) = if t != 0 {
                (pc, params.alpha_pos)
            } else {
                (1.0 - pc, params.alpha_neg)
            };
            total += focal_term(p_t, alpha, params.gamma).0;
        }
        let loss = total / p.len() as f64;
        let rg = self.rg(probs);
        self.push(
            Tensor::scalar(loss),
            Op::Focal { probs, targets, params },
            rg,
            "focal_loss",
        )
    }

    /// Mean class-weighted cross-entropy. `logits` is `(K, ...)` or
    /// `(B, K, ...)` (set `batched`); `labels` holds one class id per voxel.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[u8]>, weights: Arc<[f64]>, batched: bool) -> Result<Var> {
        let v = self.value(logits);
        let s = v.shape();
        let (batch, classes) = match (batched, s.len()) {
            (false, n) if n >= 1 => (1, s[0]),
            (true, n) if n >= 2 => (s[0], s[1]),
            _ => return Err(Error::shape("semantic_loss", format!("logits {s:?}"))),
        };
        if classes < 2 || weights.len() != classes {
            return Err(Error::shape(
                "semantic_loss",
                format!("{classes} classes with {} weights", weights.len()),
            ));
        }
        let n = v.len() / (batch * classes);
        if labels.len() != batch * n {
            return Err(Error::shape(
                "semantic_loss",
                format!("{} labels for {} voxels", labels.len(), batch * n),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::invalid(
                "labels",
                format!("class {bad} out of range for {classes} classes"),
            ));
        }
        let x = v.data();
        let mut total = 0.0;
        for b in 0..batch {
            for j in 0..n {
                let at = |k: usize| (b * classes + k) * n + j;
                let max = (0..classes).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..classes).map(|k| (x[at(k)] - max).exp()).sum::<f64>().ln();
                let y = labels[b * n + j] as usize;
                total += weights[y] * (lse - x[at(y)]);
            }
        }
        let loss = total / (batch * n) as f64;
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                batch,
                classes,
            },
            rg,
            "semantic_loss",
        )
    }

    /// Scalar `sum_i coeffs[i] * x[i]`.
    pub fn project(&mut self, x: Var, coeffs: Arc<[f64]>) -> Result<Var> {
        let v = self.value(x);
        if v.len() != coeffs.len() {
            return Err(Error::shape(
                "project",
                format!("{} values vs {} coefficients", v.len(), coeffs.len()),
            ));
        }
        let out = v.data().iter().zip(coeffs.iter()).map(|(a, c)| a * c).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(out), Op::Project { x, coeffs }, rg, "project")
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g.to_vec()),
        }
    }

    /// Clears all gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse pass from the scalar `root`, accumulating into leaf grads.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        self.accumulate(root, &[1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            self.backward_node(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Borrow juggling: compute input grads first, then accumulate.
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, dims } => {
                let (x, w, b, dims) = (*x, *w, *b, *dims);
                let (gx, gw, gb) = conv_backward(self.value(x).data(), self.value(w).data(), g, &dims);
                self.accumulate(x, &gx);
                self.accumulate(w, &gw);
                self.accumulate(b, &gb);
            }
            Op::Relu(x) => {
                let x = *x;
                let gx: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gv)| if a > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(x, &gx);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let gx: Vec<f64> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(x, &gx);
            }
            Op::Softmax { x, outer, axis, inner } => {
                let (x, outer, len, inner) = (*x, *outer, *axis, *inner);
                let y = node.value.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(x, &gx);
            }
            Op::Reshape(x) => {
                let x = *x;
                self.accumulate(x, g);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Scale(x, f) => {
                let (x, f) = (*x, *f);
                let gx: Vec<f64> = g.iter().map(|v| v * f).collect();
                self.accumulate(x, &gx);
            }
            Op::LiftSplat { features, depth, plan } => {
                let (features, depth, plan) = (*features, *depth, plan.clone());
                let go = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let (gf, gd) = plan.backward(self.value(features), self.value(depth), &go)?;
                self.accumulate(features, gf.data());
                self.accumulate(depth, gd.data());
            }
            Op::Focal { probs, targets, params } => {
                let (probs, targets, params) = (*probs, targets.clone(), *params);
                let p = self.value(probs).data();
                let scale = g[0] / p.len() as f64;
                let gp: Vec<f64> = p
                    .iter()
                    .zip(targets.iter())
                    .map(|(&pv, &t)| {
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&pv) {
                            return 0.0;
                        }
                        if t != 0 {
                            scale * focal_term(pv, params.alpha_pos, params.gamma).1
                        } else {
                            -scale * focal_term(1.0 - pv, params.alpha_neg, params.gamma).1
                        }
                    })
                    .collect();
                self.accumulate(probs, &gp);
            }
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                batch,
                classes,
            } => {
                let (logits, labels, weights, batch, classes) =
                    (*logits, labels.clone(), weights.clone(), *batch, *classes);
                let x = self.value(logits).data();
                let n = x.len() / (batch * classes);
                let scale = g[0] / (batch * n) as f64;
                let mut gx = vec![0.0; x.len()];
                for b in 0..batch {
                    for j in 0..n {
                        let at = |k: usize| (b * classes + k) * n + j;
                        let max = (0..classes).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = (0..classes).map(|k| (x[at(k)] - max).exp()).sum();
                        let y = labels[b * n + j] as usize;
                        let wy = weights[y] * scale;
                        for k in 0..classes {
                            let p = (x[at(k)] - max).exp() / sum;
                            gx[at(k)] = wy * (p - f64::from(u8::from(k == y)));
                        }
                    }
                }
                self.accumulate(logits, &gx);
            }
            Op::Project { x, coeffs } => {
                let (x, coeffs) = (*x, coeffs.clone());
                let gx: Vec<f64> = coeffs.iter().map(|c| c * g[0]).collect();
                self.accumulate(x, &gx);
            }
        }
        Ok(())
    }
}
