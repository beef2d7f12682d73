//! A small tape-based reverse-mode autodiff over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it executes. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and leaves
//! gradients on every node that transitively depends on a leaf created with
//! `requires_grad`. Nodes that do not require gradients never allocate one,
//! so a forward pass over frozen parameters costs no more than plain
//! inference.

use std::sync::Arc;

use crate::tensor::{col2im, gemm, im2col, resize_plane, resize_plane_backward, ConvGeom, LinearTaps, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        /// Column matrices per batch item, kept only when gradients flow.
        cols: Vec<Vec<f64>>,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Upsample2(Var),
    AvgPool(Var, usize),
    Resize(Var, LinearTaps, LinearTaps),
    Concat(Vec<Var>),
    /// Items `start..start + len` along the batch axis.
    Narrow(Var, usize, usize),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    AddChannel {
        x: Var,
        v: Var,
    },
    CrossEntropy {
        logits: Var,
        /// `softmax - onehot`, pre-scaled by sample weight / denominator.
        dlogits: Vec<f64>,
    },
    MaskedL1 {
        x: Var,
        /// `sign(x - target)`, pre-scaled by sample weight / denominator.
        dx: Vec<f64>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_arc(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shared_value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient left on `v` by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-D convolution. `w` is `[Cout, Cin, k, k]`, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be 4-D");
        assert_eq!(ws[1], cin, "conv input channels {cin} vs weight {ws:?}");
        let (cout, k) = (ws[0], ws[2]);
        let geom = ConvGeom::new(cin, h, wd, k, stride, pad);
        let rg = self.rg(&[x, w]) || b.map_or(false, |b| self.requires_grad(b));
        let keep_cols = rg && self.requires_grad(w) && !geom.is_pointwise();
        let (rows, p) = (geom.col_rows(), geom.col_cols());
        let mut out = Tensor::zeros(&[n, cout, geom.oh, geom.ow]);
        let mut saved = Vec::new();
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let mut scratch = vec![0.0; if geom.is_pointwise() { 0 } else { rows * p }];
            for i in 0..n {
                let xi = &xv[i * cin * h * wd..(i + 1) * cin * h * wd];
                let cols: &[f64] = if geom.is_pointwise() {
                    xi
                } else {
                    im2col(xi, &geom, &mut scratch);
                    &scratch
                };
                let oi = &mut out.data_mut()[i * cout * p..(i + 1) * cout * p];
                gemm(cout, rows, p, wv, false, cols, false, oi, 0.0);
                if let Some(b) = b {
                    let bv = self.value(b).data();
                    for (o, row) in oi.chunks_mut(p).enumerate() {
                        row.iter_mut().for_each(|v| *v += bv[o]);
                    }
                }
                if keep_cols {
                    saved.push(scratch.clone());
                }
            }
        }
        self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols: saved,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add of mismatched shapes");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(av.shape(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v / (1.0 + (-v).exp()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Silu(a), rg)
    }

    /// Nearest-neighbour upsampling by two.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        {
            let src = self.value(a).data();
            for (s, d) in src.chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        d[y * 2 * w + x] = s[(y / 2) * w + x / 2];
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Upsample2(a), rg)
    }

    pub fn avg_pool(&mut self, a: Var, k: usize) -> Var {
        let out = crate::tensor::avg_pool(self.value(a), k);
        let rg = self.rg(&[a]);
        self.push(out, Op::AvgPool(a, k), rg)
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&mut self, a: Var, oh: usize, ow: usize) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        if (h, w) == (oh, ow) {
            return a;
        }
        let ty = LinearTaps::new(h, oh);
        let tx = LinearTaps::new(w, ow);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for (s, d) in self
            .value(a)
            .data()
            .chunks(h * w)
            .zip(out.data_mut().chunks_mut(oh * ow))
        {
            resize_plane(s, w, &ty, &tx, d);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Resize(a, ty, tx), rg)
    }

    /// Channel-wise concatenation of `[N, C_i, H, W]` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let chans: Vec<usize> = parts.iter().map(|&p| self.value(p).dims4().1).collect();
        let total: usize = chans.iter().sum();
        let mut out = Tensor::zeros(&[n, total, h, w]);
        let hw = h * w;
        for i in 0..n {
            let mut off = i * total * hw;
            for (&p, &c) in parts.iter().zip(&chans) {
                let (pn, _, ph, pw) = self.value(p).dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat spatial mismatch");
                let src = &self.value(p).data()[i * c * hw..(i + 1) * c * hw];
                out.data_mut()[off..off + c * hw].copy_from_slice(src);
                off += c * hw;
            }
        }
        let rg = self.rg(parts);
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    /// Batch items `start..start + len` of an `[N, ...]` tensor.
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Var {
        let shape = self.value(a).shape().to_vec();
        assert!(start + len <= shape[0], "narrow {start}+{len} of {}", shape[0]);
        let item: usize = shape[1..].iter().product();
        let mut out_shape = shape;
        out_shape[0] = len;
        let data = self.value(a).data()[start * item..(start + len) * item].to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_vec(&out_shape, data).expect("sized"), Op::Narrow(a, start, len), rg)
    }

    /// Dense layer on a `[N, D]` input; `w` is `[O, D]`, `b` is `[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        assert_eq!(ws[1], d, "linear input width");
        let mut out = Tensor::zeros(&[n, o]);
        gemm(
            n,
            d,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            out.data_mut(),
            0.0,
        );
        let bv = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_mut(o) {
            row.iter_mut().zip(&bv).for_each(|(r, b)| *r += b);
        }
        let rg = self.rg(&[x, w, b]);
        self.push(out, Op::Linear { x, w, b }, rg)
    }

    /// Adds a per-channel vector (`[1, C]` or `[N, C]`) at every spatial position.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let vs = self.value(v).shape().to_vec();
        assert!(vs.len() == 2 && vs[1] == c && (vs[0] == 1 || vs[0] == n));
        let mut out = self.value(x).clone();
        {
            let vv = self.value(v).data();
            for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
                let (b, ch) = (i / c, i % c);
                let add = vv[if vs[0] == 1 { ch } else { b * c + ch }];
                plane.iter_mut().for_each(|p| *p += add);
            }
        }
        let rg = self.rg(&[x, v]);
        self.push(out, Op::AddChannel { x, v }, rg)
    }

    /// Weighted mean cross-entropy over `[N, K, H, W]` logits.
    ///
    /// `labels` is `[N * H * W]`; entries equal to `ignore` contribute
    /// nothing. Sample `n`'s pixel losses are multiplied by `weights[n]`,
    /// and the total is divided by the (unweighted) number of scored
    /// pixels. With no scored pixels the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: u8, weights: &[f64]) -> Var {
        let (n, k, h, w) = self.value(logits).dims4();
        let hw = h * w;
        assert_eq!(labels.len(), n * hw, "label/logit shape mismatch");
        assert_eq!(weights.len(), n);
        let lv = self.value(logits).data();
        let denom = labels.iter().filter(|&&l| l != ignore).count();
        let rg = self.requires_grad(logits);
        let mut dlogits = if rg { vec![0.0; lv.len()] } else { Vec::new() };
        let mut total = 0.0;
        if denom > 0 {
            let inv = 1.0 / denom as f64;
            let mut probs = vec![0.0; k];
            for b in 0..n {
                let base = b * k * hw;
                let mut sample_sum = 0.0;
                for p in 0..hw {
                    let y = labels[b * hw + p];
                    if y == ignore {
                        continue;
                    }
                    let y = y as usize;
                    assert!(y < k, "label {y} out of range for {k} classes");
                    let mut mx = f64::NEG_INFINITY;
                    for c in 0..k {
                        mx = mx.max(lv[base + c * hw + p]);
                    }
                    let mut z = 0.0;
                    for (c, pr) in probs.iter_mut().enumerate() {
                        *pr = (lv[base + c * hw + p] - mx).exp();
                        z += *pr;
                    }
                    sample_sum += z.ln() + mx - lv[base + y * hw + p];
                    if rg {
                        let s = weights[b] * inv;
                        for (c, pr) in probs.iter().enumerate() {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            dlogits[base + c * hw + p] = s * (pr / z - onehot);
                        }
                    }
                }
                total += weights[b] * sample_sum;
            }
            total *= inv;
        }
        self.push(Tensor::scalar(total), Op::CrossEntropy { logits, dlogits }, rg)
    }

    /// Weighted masked mean absolute error between `x` (`[N, C, h, w]`) and
    /// a constant `target` of the same shape.
    ///
    /// `mask` is `[N * h * w]`. The sum of `weights[n] * |x - target|` over
    /// masked positions and all channels is divided by
    /// `C * (number of masked positions)`; an empty mask gives zero.
    pub fn masked_l1(&mut self, x: Var, target: &Tensor, mask: &[bool], weights: &[f64]) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(target.shape(), self.value(x).shape(), "regression target shape");
        let hw = h * w;
        assert_eq!(mask.len(), n * hw);
        assert_eq!(weights.len(), n);
        let count = mask.iter().filter(|&&m| m).count();
        let rg = self.requires_grad(x);
        let xv = self.value(x).data();
        let tv = target.data();
        let mut dx = if rg { vec![0.0; xv.len()] } else { Vec::new() };
        let mut total = 0.0;
        if count > 0 {
            let inv = 1.0 / (count * c) as f64;
            for b in 0..n {
                let mut sample_sum = 0.0;
                for ch in 0..c {
                    for p in 0..hw {
                        if !mask[b * hw + p] {
                            continue;
                        }
                        let i = (b * c + ch) * hw + p;
                        let d = xv[i] - tv[i];
                        sample_sum += d.abs();
                        if rg {
                            let sign = if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            dx[i] = weights[b] * inv * sign;
                        }
                    }
                }
                total += weights[b] * sample_sum;
            }
            total *= inv;
        }
        self.push(Tensor::scalar(total), Op::MaskedL1 { x, dx }, rg)
    }

    /// Reverse pass from a scalar node. Gradients from a previous call are
    /// discarded.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if !self.requires_grad(root) {
            self.grads = grads;
            return;
        }
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::Scale(a, s) => {
                acc(*a, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s));
            }
            Op::Silu(a) => {
                let xv = nodes[a.0].value.data();
                acc(*a, grads, &mut |d| {
                    for ((d, g), &x) in d.iter_mut().zip(g).zip(xv) {
                        let s = 1.0 / (1.0 + (-x).exp());
                        *d += g * s * (1.0 + x * (1.0 - s));
                    }
                });
            }
            Op::Upsample2(a) => {
                let (_, _, h, w) = nodes[a.0].value.dims4();
                acc(*a, grads, &mut |d| {
                    for (dp, gp) in d.chunks_mut(h * w).zip(g.chunks(4 * h * w)) {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                dp[(y / 2) * w + x / 2] += gp[y * 2 * w + x];
                            }
                        }
                    }
                });
            }
            Op::AvgPool(a, k) => {
                let (_, _, h, w) = nodes[a.0].value.dims4();
                let (k, ow) = (*k, w / *k);
                let inv = 1.0 / (k * k) as f64;
                acc(*a, grads, &mut |d| {
                    for (dp, gp) in d.chunks_mut(h * w).zip(g.chunks((h / k) * ow)) {
                        for y in 0..h {
                            for x in 0..w {
                                dp[y * w + x] += gp[(y / k) * ow + x / k] * inv;
                            }
                        }
                    }
                });
            }
            Op::Resize(a, ty, tx) => {
                let (_, _, h, w) = nodes[a.0].value.dims4();
                let (oh, ow) = (ty.lo.len(), tx.lo.len());
                acc(*a, grads, &mut |d| {
                    for (dp, gp) in d.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        resize_plane_backward(gp, w, ty, tx, dp);
                    }
                });
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = nodes[i].value.dims4();
                let hw = h * w;
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p.0].value.dims4().1;
                    acc(p, grads, &mut |d| {
                        for b in 0..n {
                            let src = &g[(b * total + off) * hw..(b * total + off + c) * hw];
                            d[b * c * hw..(b + 1) * c * hw]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    });
                    off += c;
                }
            }
            Op::Narrow(a, start, len) => {
                let item = nodes[i].value.len() / len;
                acc(*a, grads, &mut |d| {
                    d[start * item..(start + len) * item]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, g)| *d += g);
                });
            }
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (n, din) = (xs[0], xs[1]);
                let o = nodes[w.0].value.shape()[0];
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                acc(*x, grads, &mut |d| gemm(n, o, din, g, false, wv, false, d, 1.0));
                acc(*w, grads, &mut |d| gemm(o, n, din, g, true, xv, false, d, 1.0));
                acc(*b, grads, &mut |d| {
                    for row in g.chunks(o) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::AddChannel { x, v } => {
                let (_, c, h, w) = nodes[x.0].value.dims4();
                let per_sample = nodes[v.0].value.shape()[0] != 1;
                acc(*x, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*v, grads, &mut |d| {
                    for (j, plane) in g.chunks(h * w).enumerate() {
                        let idx = if per_sample { j } else { j % c };
                        d[idx] += plane.iter().sum::<f64>();
                    }
                });
            }
            Op::CrossEntropy { logits, dlogits } => {
                let s = g[0];
                acc(*logits, grads, &mut |d| {
                    d.iter_mut().zip(dlogits).for_each(|(d, v)| *d += s * v)
                });
            }
            Op::MaskedL1 { x, dx } => {
                let s = g[0];
                acc(*x, grads, &mut |d| d.iter_mut().zip(dx).for_each(|(d, v)| *d += s * v));
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (n, cin, h, wd) = nodes[x.0].value.dims4();
                let cout = nodes[w.0].value.shape()[0];
                let (rows, p) = (geom.col_rows(), geom.col_cols());
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                if let Some(b) = b {
                    acc(*b, grads, &mut |d| {
                        for gi in g.chunks(cout * p) {
                            for (o, row) in gi.chunks(p).enumerate() {
                                d[o] += row.iter().sum::<f64>();
                            }
                        }
                    });
                }
                if needs(*w) {
                    acc(*w, grads, &mut |d| {
                        for bi in 0..n {
                            let gi = &g[bi * cout * p..(bi + 1) * cout * p];
                            let colsi: &[f64] = if geom.is_pointwise() {
                                &xv[bi * cin * h * wd..(bi + 1) * cin * h * wd]
                            } else {
                                &cols[bi]
                            };
                            gemm(cout, p, rows, gi, false, colsi, true, d, 1.0);
                        }
                    });
                }
                if needs(*x) {
                    let mut dcols = vec![0.0; rows * p];
                    acc(*x, grads, &mut |d| {
                        for bi in 0..n {
                            let gi = &g[bi * cout * p..(bi + 1) * cout * p];
                            let di = &mut d[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                            if geom.is_pointwise() {
                                gemm(rows, cout, p, wv, true, gi, false, di, 1.0);
                            } else {
                                gemm(rows, cout, p, wv, true, gi, false, &mut dcols, 0.0);
                                col2im(&dcols, geom, di);
                            }
                        }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], f: impl Fn(usize) -> f64) -> Arc<Tensor> {
        let n = shape.iter().product();
        Arc::new(Tensor::from_vec(shape, (0..n).map(f).collect()).unwrap())
    }

    /// Central-difference check of d(loss)/d(input) for a graph builder.
    fn check(input: Arc<Tensor>, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.leaf(input.clone(), true);
        let y = build(&mut g, x);
        g.backward(y);
        let analytic = g.grad(x).unwrap().to_vec();
        let h = 1e-6;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut p = (*input).clone();
                p.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.leaf(Arc::new(p), false);
                let y = build(&mut g, x);
                g.value(y).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / (fd.abs().max(analytic[i].abs()) + 1e-8);
            assert!(err < 1e-5, "element {i}: fd {fd} vs analytic {}", analytic[i]);
        }
    }

    /// Reduces a 4-D tensor to a scalar with non-uniform weights.
    fn probe(g: &mut Graph, v: Var) -> Var {
        let shape = g.value(v).shape().to_vec();
        let n: usize = shape.iter().product();
        let target =
            Tensor::from_vec(&shape, (0..n).map(|i| (i as f64 * 0.7).sin() * 3.0).collect()).unwrap();
        let (b, _, h, w) = g.value(v).dims4();
        g.masked_l1(v, &target, &vec![true; b * h * w], &vec![1.0; b])
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = t(&[2, 3, 5, 6], |i| (i as f64 * 0.31).sin());
        let w = t(&[4, 3, 3, 3], |i| (i as f64 * 0.17).cos() * 0.5);
        let b = t(&[4], |i| i as f64 * 0.1);
        for &(stride, pad) in &[(1, 1), (2, 1)] {
            let (w2, b2) = (w.clone(), b.clone());
            check(x.clone(), move |g, x| {
                let w = g.leaf(w2.clone(), false);
                let b = g.leaf(b2.clone(), false);
                let y = g.conv2d(x, w, Some(b), stride, pad);
                probe(g, y)
            });
            let x2 = x.clone();
            check(w.clone(), move |g, w| {
                let x = g.leaf(x2.clone(), false);
                let y = g.conv2d(x, w, None, stride, pad);
                probe(g, y)
            });
        }
        let w1 = t(&[4, 3, 1, 1], |i| (i as f64 * 0.4).sin());
        check(x.clone(), move |g, x| {
            let w = g.leaf(w1.clone(), false);
            let y = g.conv2d(x, w, None, 1, 0);
            probe(g, y)
        });
    }

    #[test]
    fn resampling_gradients_match_finite_differences() {
        let x = t(&[1, 2, 4, 4], |i| (i as f64 * 0.53).sin());
        check(x.clone(), |g, x| {
            let y = g.resize(x, 7, 9);
            probe(g, y)
        });
        check(x.clone(), |g, x| {
            let y = g.upsample2(x);
            probe(g, y)
        });
        check(x.clone(), |g, x| {
            let y = g.avg_pool(x, 2);
            probe(g, y)
        });
        check(x, |g, x| {
            let s = g.silu(x);
            let y = g.concat(&[s, x]);
            let y = g.scale(y, 1.7);
            probe(g, y)
        });
    }

    #[test]
    fn linear_and_channel_bias_gradients() {
        let c = t(&[1, 5], |i| i as f64 * 0.3 - 0.5);
        let w = t(&[3, 5], |i| (i as f64).sin());
        let b = t(&[3], |i| i as f64);
        let x = t(&[2, 3, 2, 2], |i| (i as f64 * 0.9).cos());
        let (w2, b2, x2) = (w.clone(), b.clone(), x.clone());
        check(c, move |g, c| {
            let w = g.leaf(w2.clone(), false);
            let b = g.leaf(b2.clone(), false);
            let x = g.leaf(x2.clone(), false);
            let v = g.linear(c, w, b);
            let y = g.add_channel(x, v);
            probe(g, y)
        });
    }

    #[test]
    fn cross_entropy_gradient_and_ignore() {
        let logits = t(&[2, 3, 2, 2], |i| (i as f64 * 1.3).sin() * 2.0);
        let labels = vec![0, 1, 255, 2, 2, 2, 1, 255];
        let weights = vec![0.5, 1.5];
        check(logits, move |g, x| g.cross_entropy(x, &labels, 255, &weights));

        let mut g = Graph::new();
        let l = g.leaf(t(&[1, 3, 1, 2], |i| i as f64), true);
        let y = g.cross_entropy(l, &[255, 255], 255, &[1.0]);
        assert_eq!(g.value(y).item(), 0.0);
        g.backward(y);
        assert!(g.grad(l).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_paths_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 1, 2, 2], |i| i as f64), false);
        let b = g.leaf(t(&[1, 1, 2, 2], |i| i as f64 * 2.0), true);
        let s = g.add(a, b);
        let y = probe(&mut g, s);
        g.backward(y);
        assert!(g.grad(a).is_none());
        assert!(g.grad(b).is_some());
    }

    #[test]
    fn narrow_routes_gradient_to_its_slice() {
        let x = t(&[3, 2, 2, 2], |i| (i as f64 * 0.9).cos());
        check(x, |g, x| {
            let a = g.narrow(x, 1, 2);
            probe(g, a)
        });
        let mut g = Graph::new();
        let x = g.leaf(t(&[3, 1, 1, 2], |i| i as f64), true);
        let a = g.narrow(x, 2, 1);
        assert_eq!(g.value(a).data(), &[4.0, 5.0]);
        let l = probe(&mut g, a);
        g.backward(l);
        assert!(g.grad(x).unwrap()[..4].iter().all(|&d| d == 0.0));
    }
}
