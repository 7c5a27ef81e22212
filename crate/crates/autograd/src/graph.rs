//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass. Node
//! values are computed eagerly; [`Graph::backward`] walks the tape in reverse
//! and returns the gradient of a scalar node with respect to every node that
//! participates in it. All reductions run in a fixed order, so results are
//! bit-reproducible for identical inputs.

use crate::conv::{col2im, conv_forward_sample, depth_modulation, im2col, modulate, ConvGeom};
use crate::float::{gemm, Float};
use crate::tensor::Tensor;
use crate::{AutogradError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
        cout: usize,
        cols: Vec<T>,
        modulation: Option<Vec<T>>,
    },
    ConvT {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        /// adjoint geometry: maps the output plane back onto the input plane
        geom: ConvGeom,
        cin: usize,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Softmax(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    MulSpatial {
        e: NodeId,
        a: NodeId,
    },
    Concat(Vec<NodeId>),
    GlobalAvgPool(NodeId),
    Reshape(NodeId),
    Grl(NodeId, T),
    Sum(NodeId),
    Mse {
        pred: NodeId,
        target: Vec<T>,
        weights: Vec<T>,
        denom: T,
    },
    Bce {
        logits: NodeId,
        labels: Vec<T>,
        weights: Vec<T>,
        denom: T,
    },
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`NodeId`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(msg: String) -> AutogradError {
    AutogradError::Shape(msg)
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Constant input (no gradient tracked).
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a trainable parameter or a probe).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn check_bias(&self, b: Option<NodeId>, n: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != n {
                return Err(shape_err(format!(
                    "bias has {} entries, expected {n}",
                    self.value(b).len()
                )));
            }
        }
        Ok(())
    }

    /// 2D convolution. `x: [N, C, H, W]`, `w: [Cout, C, k, k]`, `b: [Cout]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        self.conv2d_impl(x, w, b, stride, pad, None)
    }

    /// Depth-aware convolution: every neighbourhood tap is weighted by
    /// `exp(-|d(center) - d(tap)|)` computed from the constant `depth` plane
    /// (`[N, 1, H, W]`, same spatial extent as `x`).
    pub fn conv2d_depth_aware(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        depth: &Tensor<T>,
    ) -> Result<NodeId> {
        self.conv2d_impl(x, w, b, stride, pad, Some(depth))
    }

    fn conv2d_impl(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        depth: Option<&Tensor<T>>,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err(format!("conv2d: input {xs:?} weight {ws:?}")));
        }
        let (n, cout) = (xs[0], ws[0]);
        let geom = ConvGeom::forward(xs[1], xs[2], xs[3], ws[2], stride, pad)
            .ok_or_else(|| shape_err(format!("conv2d: kernel larger than padded input {xs:?}")))?;
        self.check_bias(b, cout)?;
        let modulation = match depth {
            Some(d) => {
                if d.shape() != [n, 1, xs[2], xs[3]] {
                    return Err(shape_err(format!(
                        "depth-aware conv: depth {:?} vs input {xs:?}",
                        d.shape()
                    )));
                }
                let mut all = Vec::new();
                for i in 0..n {
                    all.extend(depth_modulation(d.outer(i), &geom));
                }
                Some(all)
            }
            None => None,
        };
        let (rows, plane) = (geom.col_rows(), geom.col_cols());
        let per = rows * plane;
        let mut cols = vec![T::zero(); n * per];
        let mut out = vec![T::zero(); n * cout * plane];
        let modblock = geom.kernel * geom.kernel * plane;
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            for i in 0..n {
                let c = &mut cols[i * per..(i + 1) * per];
                if geom.is_pointwise() && modulation.is_none() {
                    c.copy_from_slice(xv.outer(i));
                } else {
                    im2col(xv.outer(i), &geom, c);
                }
                if let Some(m) = &modulation {
                    modulate(c, &m[i * modblock..(i + 1) * modblock], &geom);
                }
                conv_forward_sample(c, wv, cout, &geom, &mut out[i * cout * plane..(i + 1) * cout * plane]);
            }
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), n, cout, plane);
        }
        let value = Tensor::new(&[n, cout, geom.out_h, geom.out_w], out)?;
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cout,
                cols,
                modulation,
            },
            needs,
        ))
    }

    /// Transposed 2D convolution. `x: [N, Cin, H, W]`, `w: [Cin, Cout, k, k]`.
    /// Output extent is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err(format!("conv_transpose2d: input {xs:?} weight {ws:?}")));
        }
        let (n, cin, cout, k) = (xs[0], xs[1], ws[1], ws[2]);
        let oh = ConvGeom::transposed_out(xs[2], k, stride, pad)
            .ok_or_else(|| shape_err("conv_transpose2d: empty output".into()))?;
        let ow = ConvGeom::transposed_out(xs[3], k, stride, pad)
            .ok_or_else(|| shape_err("conv_transpose2d: empty output".into()))?;
        let geom = ConvGeom {
            channels: cout,
            in_h: oh,
            in_w: ow,
            kernel: k,
            stride,
            pad,
            out_h: xs[2],
            out_w: xs[3],
        };
        self.check_bias(b, cout)?;
        let (rows, plane) = (geom.col_rows(), geom.col_cols());
        let oplane = oh * ow;
        let mut out = vec![T::zero(); n * cout * oplane];
        let mut cols = vec![T::zero(); rows * plane];
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            for i in 0..n {
                gemm(true, false, rows, plane, cin, T::one(), wv, xv.outer(i), T::zero(), &mut cols);
                col2im(&cols, &geom, &mut out[i * cout * oplane..(i + 1) * cout * oplane]);
            }
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), n, cout, oplane);
        }
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(value, Op::ConvT { x, w, b, geom, cin }, needs))
    }

    /// Affine map `y = x · wᵀ + b`, `x: [N, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: input {xs:?} weight {ws:?}")));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        self.check_bias(b, fout)?;
        let mut out = vec![T::zero(); n * fout];
        gemm(false, true, n, fout, fin, T::one(), self.value(x).data(), self.value(w).data(), T::zero(), &mut out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(fout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let value = Tensor::new(&[n, fout], out)?;
        let needs = self.ng(&[x, w]) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let value = self.value(x).map(f);
        let needs = self.needs_grad(x);
        self.push(value, op, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Gradient reversal: identity forward, gradient multiplied by `-lambda` backward.
    pub fn grl(&mut self, x: NodeId, lambda: T) -> NodeId {
        let value = self.value(x).clone();
        let needs = self.needs_grad(x);
        self.push(value, Op::Grl(x, lambda), needs)
    }

    /// Row-wise softmax over the last axis of a `[N, K]` tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(shape_err(format!("softmax expects [N, K], got {xs:?}")));
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(xs[1]) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Tensor::new(&xs, out)?, Op::Softmax(x), needs))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let needs = self.ng(&[a, b]);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `out[n, c, p] = e[n, c, p] * a[n, p]` where `a` holds `N·h·w` entries.
    pub fn mul_spatial(&mut self, e: NodeId, a: NodeId) -> Result<NodeId> {
        let es = self.shape(e).to_vec();
        if es.len() != 4 {
            return Err(shape_err(format!("mul_spatial: features {es:?}")));
        }
        let (n, c, plane) = (es[0], es[1], es[2] * es[3]);
        if self.value(a).len() != n * plane || self.shape(a)[0] != n {
            return Err(shape_err(format!(
                "mul_spatial: attention {:?} does not cover {n}x{}x{}",
                self.shape(a),
                es[2],
                es[3]
            )));
        }
        let mut out = self.value(e).data().to_vec();
        let av = self.value(a).data();
        for i in 0..n {
            let ai = &av[i * plane..(i + 1) * plane];
            for ch in 0..c {
                let o = &mut out[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                for (v, &w) in o.iter_mut().zip(ai) {
                    *v *= w;
                }
            }
        }
        let needs = self.ng(&[e, a]);
        Ok(self.push(Tensor::new(&es, out)?, Op::MulSpatial { e, a }, needs))
    }

    /// Channel-axis concatenation of `[N, Ci, H, W]` tensors, in order.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = self
            .shape(*parts.first().ok_or_else(|| shape_err("concat of nothing".into()))?)
            .to_vec();
        if first.len() != 4 {
            return Err(shape_err(format!("concat_channels expects 4D, got {first:?}")));
        }
        let (n, plane) = (first[0], first[2] * first[3]);
        let mut ctot = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 4 || s[0] != n || s[2] != first[2] || s[3] != first[3] {
                return Err(shape_err(format!("concat_channels: {s:?} vs {first:?}")));
            }
            ctot += s[1];
        }
        let mut out = Vec::with_capacity(n * ctot * plane);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).outer(i));
            }
        }
        let value = Tensor::new(&[n, ctot, first[2], first[3]], out)?;
        let needs = self.ng(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("global_avg_pool expects 4D, got {xs:?}")));
        }
        let plane = xs[2] * xs[3];
        let inv = T::one() / T::of(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.needs_grad(x);
        Ok(self.push(Tensor::new(&[xs[0], xs[1]], data)?, Op::GlobalAvgPool(x), needs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs_grad(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum();
        let needs = self.needs_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = T::of(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Weighted per-sample mean squared error.
    ///
    /// Each leading-axis sample contributes `weights[n] * mean((pred - target)^2)`;
    /// the total is divided by `sum(weights)` (or 1 when every weight is zero).
    pub fn mse_loss(&mut self, pred: NodeId, target: &Tensor<T>, weights: &[T]) -> Result<NodeId> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err(format!(
                "mse_loss: prediction {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        let n = target.dim(0);
        if weights.len() != n {
            return Err(shape_err(format!("mse_loss: {} weights for {n} samples", weights.len())));
        }
        let per = target.len() / n;
        let denom = positive_or_one(weights.iter().copied().sum());
        let pv = self.value(pred);
        let mut total = T::zero();
        for i in 0..n {
            if weights[i] == T::zero() {
                continue;
            }
            let sq: T = pv
                .outer(i)
                .iter()
                .zip(target.outer(i))
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum();
            total += weights[i] * sq / T::of(per as f64);
        }
        let needs = self.needs_grad(pred);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            needs,
        ))
    }

    /// Weighted mean binary cross-entropy on logits (`labels` in {0, 1}),
    /// evaluated in the overflow-free form `max(z,0) - z·y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[T], weights: &[T]) -> Result<NodeId> {
        let n = self.value(logits).len();
        if labels.len() != n || weights.len() != n {
            return Err(shape_err(format!(
                "bce_with_logits: {n} logits, {} labels, {} weights",
                labels.len(),
                weights.len()
            )));
        }
        let denom = positive_or_one(weights.iter().copied().sum());
        let total: T = self
            .value(logits)
            .data()
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((&z, &y), &w)| w * bce_logit(z, y))
            .sum();
        let needs = self.needs_grad(logits);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::Bce {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            needs,
        ))
    }

    /// Group normalization of `x: [N, C, H, W]` over `groups` channel groups,
    /// followed by the per-channel affine map `gamma · x̂ + beta`.
    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, eps: T) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || groups == 0 || xs[1] % groups != 0 {
            return Err(shape_err(format!("group_norm: input {xs:?} with {groups} groups")));
        }
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(format!("group_norm: affine parameters must have {c} entries")));
        }
        let span = c / groups * plane;
        let m = T::of(span as f64);
        let xv = self.value(x).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(n * groups);
        for (chunk, out) in xv.chunks_exact(span).zip(xhat.chunks_exact_mut(span)) {
            let mean = chunk.iter().copied().sum::<T>() / m;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let out = Tensor::from_fn(&xs, |i| {
            let ch = (i / plane) % c;
            xhat[i] * gv[ch] + bv[ch]
        });
        let needs = self.ng(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &dy, &mut grads)?;
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let dyv = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                geom,
                cout,
                cols,
                modulation,
            } => {
                let (n, cout) = (self.shape(*x)[0], *cout);
                let (rows, plane) = (geom.col_rows(), geom.col_cols());
                let per = rows * plane;
                if let Some(b) = b {
                    self.accum(grads, *b, channel_bias_grad(dyv, n, cout, plane));
                }
                if self.needs_grad(*w) {
                    let mut dw = Tensor::zeros(self.shape(*w));
                    for i in 0..n {
                        let dyi = &dyv[i * cout * plane..(i + 1) * cout * plane];
                        gemm(false, true, cout, rows, plane, T::one(), dyi, &cols[i * per..(i + 1) * per], T::one(), dw.data_mut());
                    }
                    self.accum(grads, *w, dw);
                }
                if self.needs_grad(*x) {
                    let wv = self.value(*w).data();
                    let mut dx = Tensor::zeros(self.shape(*x));
                    let xper = dx.len() / n;
                    let mut dcols = vec![T::zero(); per];
                    let modblock = geom.kernel * geom.kernel * plane;
                    for i in 0..n {
                        let dyi = &dyv[i * cout * plane..(i + 1) * cout * plane];
                        gemm(true, false, rows, plane, cout, T::one(), wv, dyi, T::zero(), &mut dcols);
                        if let Some(m) = modulation {
                            modulate(&mut dcols, &m[i * modblock..(i + 1) * modblock], geom);
                        }
                        let dxi = &mut dx.data_mut()[i * xper..(i + 1) * xper];
                        if geom.is_pointwise() && modulation.is_none() {
                            dxi.copy_from_slice(&dcols);
                        } else {
                            col2im(&dcols, geom, dxi);
                        }
                    }
                    self.accum(grads, *x, dx);
                }
            }
            Op::ConvT { x, w, b, geom, cin } => {
                let n = self.shape(*x)[0];
                let cout = geom.channels;
                let oplane = geom.in_h * geom.in_w;
                let (rows, plane) = (geom.col_rows(), geom.col_cols());
                if let Some(b) = b {
                    self.accum(grads, *b, channel_bias_grad(dyv, n, cout, oplane));
                }
                let need_w = self.needs_grad(*w);
                let need_x = self.needs_grad(*x);
                if need_w || need_x {
                    let xv = self.value(*x);
                    let wv = self.value(*w).data();
                    let mut dw = need_w.then(|| Tensor::zeros(self.shape(*w)));
                    let mut dx = need_x.then(|| Tensor::zeros(self.shape(*x)));
                    let mut dcols = vec![T::zero(); rows * plane];
                    for i in 0..n {
                        im2col(&dyv[i * cout * oplane..(i + 1) * cout * oplane], geom, &mut dcols);
                        if let Some(dw) = dw.as_mut() {
                            gemm(false, true, *cin, rows, plane, T::one(), xv.outer(i), &dcols, T::one(), dw.data_mut());
                        }
                        if let Some(dx) = dx.as_mut() {
                            let xper = cin * plane;
                            gemm(false, false, *cin, plane, rows, T::one(), wv, &dcols, T::zero(), &mut dx.data_mut()[i * xper..(i + 1) * xper]);
                        }
                    }
                    if let Some(dw) = dw {
                        self.accum(grads, *w, dw);
                    }
                    if let Some(dx) = dx {
                        self.accum(grads, *x, dx);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if let Some(b) = b {
                    let mut db = Tensor::zeros(&[fout]);
                    for row in dyv.chunks_exact(fout) {
                        for (d, &g) in db.data_mut().iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accum(grads, *b, db);
                }
                if self.needs_grad(*w) {
                    let mut dw = Tensor::zeros(&[fout, fin]);
                    gemm(true, false, fout, fin, n, T::one(), dyv, self.value(*x).data(), T::zero(), dw.data_mut());
                    self.accum(grads, *w, dw);
                }
                if self.needs_grad(*x) {
                    let mut dx = Tensor::zeros(&[n, fin]);
                    gemm(false, false, n, fin, fout, T::one(), dyv, self.value(*w).data(), T::zero(), dx.data_mut());
                    self.accum(grads, *x, dx);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let g = Tensor::from_fn(dy.shape(), |i| if xv[i] > T::zero() { dyv[i] } else { T::zero() });
                self.accum(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                let g = Tensor::from_fn(dy.shape(), |i| dyv[i] * yv[i] * (T::one() - yv[i]));
                self.accum(grads, *x, g);
            }
            Op::Exp(x) => {
                let yv = node.value.data();
                let g = Tensor::from_fn(dy.shape(), |i| dyv[i] * yv[i]);
                self.accum(grads, *x, g);
            }
            Op::Softmax(x) => {
                let k = dy.shape()[1];
                let yv = node.value.data();
                let mut g = vec![T::zero(); yv.len()];
                for ((gr, yr), dr) in g.chunks_exact_mut(k).zip(yv.chunks_exact(k)).zip(dyv.chunks_exact(k)) {
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for j in 0..k {
                        gr[j] = yr[j] * (dr[j] - dot);
                    }
                }
                self.accum(grads, *x, Tensor::new(dy.shape(), g)?);
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, dy.clone());
                self.accum(grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs_grad(*a) {
                    self.accum(grads, *a, Tensor::from_fn(dy.shape(), |i| dyv[i] * bv[i]));
                }
                if self.needs_grad(*b) {
                    self.accum(grads, *b, Tensor::from_fn(dy.shape(), |i| dyv[i] * av[i]));
                }
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accum(grads, *x, dy.map(|v| v * f));
            }
            Op::Grl(x, lambda) => {
                let f = -*lambda;
                self.accum(grads, *x, dy.map(|v| v * f));
            }
            Op::MulSpatial { e, a } => {
                let es = self.shape(*e);
                let (n, c, plane) = (es[0], es[1], es[2] * es[3]);
                let ev = self.value(*e).data();
                let av = self.value(*a).data();
                if self.needs_grad(*e) {
                    let g = Tensor::from_fn(es, |idx| {
                        let i = idx / (c * plane);
                        dyv[idx] * av[i * plane + idx % plane]
                    });
                    self.accum(grads, *e, g);
                }
                if self.needs_grad(*a) {
                    let mut da = Tensor::zeros(self.shape(*a));
                    let dav = da.data_mut();
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * plane;
                            for p in 0..plane {
                                dav[i * plane + p] += dyv[base + p] * ev[base + p];
                            }
                        }
                    }
                    self.accum(grads, *a, da);
                }
            }
            Op::Concat(parts) => {
                let n = dy.shape()[0];
                let ctot = dy.shape()[1];
                let plane = dy.shape()[2] * dy.shape()[3];
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p).to_vec();
                    let c = ps[1];
                    if self.needs_grad(p) {
                        let mut g = Vec::with_capacity(n * c * plane);
                        for i in 0..n {
                            let start = (i * ctot + offset) * plane;
                            g.extend_from_slice(&dyv[start..start + c * plane]);
                        }
                        self.accum(grads, p, Tensor::new(&ps, g)?);
                    }
                    offset += c;
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let plane = xs[2] * xs[3];
                let inv = T::one() / T::of(plane as f64);
                let g = Tensor::from_fn(xs, |i| dyv[i / plane] * inv);
                self.accum(grads, *x, g);
            }
            Op::Reshape(x) => {
                let g = dy.clone().reshape(self.shape(*x))?;
                self.accum(grads, *x, g);
            }
            Op::Sum(x) => {
                self.accum(grads, *x, Tensor::full(self.shape(*x), dyv[0]));
            }
            Op::Mse {
                pred,
                target,
                weights,
                denom,
            } => {
                let pv = self.value(*pred);
                let n = weights.len();
                let per = pv.len() / n;
                let mut g = vec![T::zero(); pv.len()];
                for i in 0..n {
                    let coef = dyv[0] * T::of(2.0) * weights[i] / (T::of(per as f64) * *denom);
                    for j in i * per..(i + 1) * per {
                        g[j] = coef * (pv.data()[j] - target[j]);
                    }
                }
                self.accum(grads, *pred, Tensor::new(pv.shape(), g)?);
            }
            Op::Bce {
                logits,
                labels,
                weights,
                denom,
            } => {
                let zv = self.value(*logits);
                let g = Tensor::from_fn(zv.shape(), |i| {
                    dyv[0] * weights[i] * (sigmoid(zv.data()[i]) - labels[i]) / *denom
                });
                self.accum(grads, *logits, g);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            } => {
                let xs = self.shape(*x);
                let (c, plane) = (xs[1], xs[2] * xs[3]);
                let gv = self.value(*gamma).data();
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                for (i, (&d, &h)) in dyv.iter().zip(xhat).enumerate() {
                    let ch = (i / plane) % c;
                    dgamma.data_mut()[ch] += d * h;
                    dbeta.data_mut()[ch] += d;
                }
                self.accum(grads, *gamma, dgamma);
                self.accum(grads, *beta, dbeta);
                if self.needs_grad(*x) {
                    let span = c / groups * plane;
                    let m = T::of(span as f64);
                    let mut dx = vec![T::zero(); dyv.len()];
                    for (k, out) in dx.chunks_exact_mut(span).enumerate() {
                        let base = k * span;
                        let dxhat = |j: usize| dyv[base + j] * gv[((base + j) / plane) % c];
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for j in 0..span {
                            let d = dxhat(j);
                            s1 += d;
                            s2 += d * xhat[base + j];
                        }
                        let f = inv_std[k] / m;
                        for (j, o) in out.iter_mut().enumerate() {
                            *o = f * (m * dxhat(j) - s1 - xhat[base + j] * s2);
                        }
                    }
                    self.accum(grads, *x, Tensor::new(xs, dx)?);
                }
            }
        }
        Ok(())
    }
}

fn positive_or_one<T: Float>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::one()
    }
}

pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Stable logistic cross-entropy of one logit.
pub fn bce_logit<T: Float>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

fn add_channel_bias<T: Float>(out: &mut [T], b: &[T], n: usize, c: usize, plane: usize) {
    for i in 0..n {
        for (ch, &bb) in b.iter().enumerate().take(c) {
            for v in &mut out[(i * c + ch) * plane..(i * c + ch + 1) * plane] {
                *v += bb;
            }
        }
    }
}

fn channel_bias_grad<T: Float>(dy: &[T], n: usize, c: usize, plane: usize) -> Tensor<T> {
    let mut db = Tensor::zeros(&[c]);
    for i in 0..n {
        for ch in 0..c {
            let s: T = dy[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().copied().sum();
            db.data_mut()[ch] += s;
        }
    }
    db
}
