//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and `backward` is a single reverse sweep.

use super::tensor::{gemm, numel, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{dist2, knn, Point3};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward-pass faults used to prove the gradient checker catches bugs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes gradient through negative inputs too.
    ReluLeak,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddBroadcast { x: Var, y: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows { x: Var, s: Var },
    Relu(Var),
    Sigmoid(Var),
    Gather { x: Var, index: Vec<usize> },
    Concat(Var, Var),
    MaxPool { x: Var, argmax: Vec<u32> },
    PairwiseDiff { a: Var, b: Var },
    Idw(Box<IdwSaved>),
    NormalizeRows(Var),
    MeanLastDim(Var),
    Reshape(Var),
    Sum(Var),
    DotConst { x: Var, c: Tensor },
    CrossEntropy { logits: Var, targets: Vec<f64>, batch: usize },
}

#[derive(Debug)]
struct IdwSaved {
    query: Var,
    features: Var,
    support: Vec<Point3>,
    neighbors: Vec<usize>,
    k: usize,
    epsilon: f64,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Self { nodes: Vec::new(), fault: Some(fault) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(mismatch("linear", xs, ws));
        }
        let (k, n) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(mismatch("linear bias", self.shape(b), &[n]));
            }
        }
        let m = self.value(x).len() / k;
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(x).data(),
            (k as isize, 1),
            self.value(w).data(),
            (n as isize, 1),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::from_parts_unchecked(shape, out), Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::Add(a, b), &[a, b]))
    }

    /// Adds `y` to every trailing block of `x`; `y`'s shape must equal a suffix of `x`'s.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (xs, ys) = (self.shape(x), self.shape(y));
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(mismatch("add_broadcast", xs, ys));
        }
        let yv = self.value(y).data();
        let mut data = self.value(x).data().to_vec();
        for block in data.chunks_exact_mut(yv.len()) {
            for (o, v) in block.iter_mut().zip(yv) {
                *o += v;
            }
        }
        let shape = xs.to_vec();
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::AddBroadcast { x, y }, &[x, y]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|v| v * factor);
        self.push(t, Op::Scale(a, factor), &[a])
    }

    /// Multiplies each first-axis slice of `x` by the matching entry of `s` (`[rows]`).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        if self.shape(s) != [rows] || self.value(x).rank() == 0 {
            return Err(mismatch("scale_rows", self.shape(x), self.shape(s)));
        }
        let w = self.value(x).row_len();
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(w)
            .zip(sv)
            .flat_map(|(row, &f)| row.iter().map(move |v| v * f))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::ScaleRows { x, s }, &[x, s]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    /// Gathers first-axis rows of `x` at `index` and reshapes to `out_shape`.
    pub fn gather(&mut self, x: Var, index: &[usize], out_shape: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let w = src.row_len();
        let rows = src.rows();
        if numel(out_shape) != index.len() * w {
            return Err(mismatch("gather", out_shape, &[index.len(), w]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange { index: bad, len: rows });
        }
        let data = src.gather_rows(index).into_data();
        let op = Op::Gather { x, index: index.to_vec() };
        Ok(self.push(Tensor::from_parts_unchecked(out_shape.to_vec(), data), op, &[x]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(mismatch("concat", sa, sb));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.chunks_exact(ca).zip(vb.chunks_exact(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::Concat(a, b), &[a, b]))
    }

    /// Max over the member axis of `[groups, members, channels]`. The first
    /// (smallest member index) maximum receives the gradient.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::ShapeMismatch(format!("max_pool expects [groups, members, C], got {s:?}")));
        }
        let (g, k, c) = (s[0], s[1], s[2]);
        let v = self.value(x).data();
        let mut out = vec![0.0; g * c];
        let mut argmax = vec![0u32; g * c];
        for gi in 0..g {
            let base = gi * k * c;
            let orow = &mut out[gi * c..(gi + 1) * c];
            orow.copy_from_slice(&v[base..base + c]);
            let arow = &mut argmax[gi * c..(gi + 1) * c];
            for m in 1..k {
                let row = &v[base + m * c..base + (m + 1) * c];
                for ch in 0..c {
                    if row[ch] > orow[ch] {
                        orow[ch] = row[ch];
                        arow[ch] = m as u32;
                    }
                }
            }
        }
        Ok(self.push(Tensor::from_parts_unchecked(vec![g, c], out), Op::MaxPool { x, argmax }, &[x]))
    }

    /// `out[n, r, :] = a[r, :] - b[n, :]` for `a: [R, D]`, `b: [N, D]`.
    pub fn pairwise_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("pairwise_diff", sa, sb));
        }
        let (r, n, d) = (sa[0], sb[0], sa[1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * r * d);
        for bi in vb.chunks_exact(d) {
            for ar in va.chunks_exact(d) {
                data.extend(ar.iter().zip(bi).map(|(x, y)| x - y));
            }
        }
        Ok(self.push(Tensor::from_parts_unchecked(vec![n, r, d], data), Op::PairwiseDiff { a, b }, &[a, b]))
    }

    /// Inverse-distance weighted interpolation of `features` (`[N, C]`, attached
    /// to the fixed `support` positions) at `query` positions (`[Q, 3]`), using
    /// the `k` nearest supports of each query and weights `1 / (d + epsilon)`.
    /// Differentiable in both the features and the query positions; the
    /// neighbor selection itself is piecewise constant.
    pub fn idw(&mut self, query: Var, features: Var, support: &[Point3], k: usize, epsilon: f64) -> Result<Var> {
        let qs = self.shape(query);
        let fs = self.shape(features);
        if qs.len() != 2 || qs[1] != 3 || fs.len() != 2 || fs[0] != support.len() {
            return Err(mismatch("idw", qs, fs));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument("idw epsilon must be positive".into()));
        }
        let queries: Vec<Point3> = self.value(query).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let nb = knn(&queries, support, k)?;
        let c = fs[1];
        let fv = self.value(features).data();
        let mut out = vec![0.0; queries.len() * c];
        let mut neighbors = Vec::with_capacity(queries.len() * k);
        for (qi, (idx, dist)) in nb.iter().enumerate() {
            let row = &mut out[qi * c..(qi + 1) * c];
            let mut total = 0.0;
            for (&i, &d) in idx.iter().zip(dist) {
                let w = 1.0 / (d + epsilon);
                total += w;
                for (o, &f) in row.iter_mut().zip(&fv[i * c..(i + 1) * c]) {
                    *o += w * f;
                }
            }
            for o in row.iter_mut() {
                *o /= total;
            }
            neighbors.extend_from_slice(idx);
        }
        let saved = IdwSaved { query, features, support: support.to_vec(), neighbors, k, epsilon };
        let value = Tensor::from_parts_unchecked(vec![queries.len(), c], out);
        Ok(self.push(value, Op::Idw(Box::new(saved)), &[query, features]))
    }

    /// Scales each row of a `[rows, D]` tensor to unit length; zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch(format!("normalize_rows expects rank 2, got {s:?}")));
        }
        let d = s[1];
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let shape = s.to_vec();
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::NormalizeRows(x), &[x]))
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last_dim(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(Error::ShapeMismatch("mean_last_dim of a scalar".into()));
        }
        let c = *s.last().unwrap();
        let mut shape = s[..s.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let data = self.value(x).data().chunks_exact(c).map(|r| r.iter().sum::<f64>() / c as f64).collect();
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), Op::MeanLastDim(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `sum(x * c)` for a constant `c` of the same shape.
    pub fn dot_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(mismatch("dot_const", self.shape(x), c.shape()));
        }
        let s: f64 = self.value(x).data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x, c }, &[x]))
    }

    /// Mean label-smoothed cross-entropy of `logits: [B, classes]`.
    ///
    /// The true class gets `1 - smoothing`; the rest is spread evenly over the
    /// other classes.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], smoothing: f64) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("cross_entropy", s, &[labels.len()]));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!("label smoothing must be in [0, 1), got {smoothing}")));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidLabel { label: bad, classes: k });
        }
        let off = if k > 1 { smoothing / (k - 1) as f64 } else { 0.0 };
        let on = if k > 1 { 1.0 - smoothing } else { 1.0 };
        let v = self.value(logits).data();
        let mut targets = vec![off; b * k];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            targets[i * k + label] = on;
            let row = &v[i * k..(i + 1) * k];
            let lse = log_sum_exp(row);
            for (c, &z) in row.iter().enumerate() {
                let q = targets[i * k + c];
                if q > 0.0 {
                    loss -= q * (z - lse);
                }
            }
        }
        let loss = (loss / b as f64).max(0.0);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, batch: b }, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(Tensor::from_parts_unchecked(seed_shape, vec![1.0]));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[id].value;
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (k, n) = (ws[0], ws[1]);
                let xv = self.value(*x);
                let m = xv.len() / k;
                if self.wants(*x) {
                    let mut gx = vec![0.0; m * k];
                    // gx = g @ w^T
                    gemm(m, n, k, 1.0, gd, (n as isize, 1), self.value(*w).data(), (1, n as isize), 0.0, &mut gx);
                    accumulate(grads, *x, xv.shape(), gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; k * n];
                    // gw = x^T @ g
                    gemm(k, m, n, 1.0, xv.data(), (1, k as isize), gd, (n as isize, 1), 0.0, &mut gw);
                    accumulate(grads, *w, &[k, n], gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![0.0; n];
                        for row in gd.chunks_exact(n) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(grads, *b, &[n], gb);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(grads, *v, g.shape(), gd.to_vec());
                    }
                }
            }
            Op::AddBroadcast { x, y } => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.shape(), gd.to_vec());
                }
                if self.wants(*y) {
                    let ys = self.shape(*y);
                    let mut gy = vec![0.0; numel(ys)];
                    for block in gd.chunks_exact(gy.len()) {
                        for (o, v) in gy.iter_mut().zip(block) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *y, ys, gy);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.shape(), gd.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.iter().map(|v| v * f).collect());
                }
            }
            Op::ScaleRows { x, s } => {
                let xv = self.value(*x);
                let w = xv.row_len();
                let sv = self.value(*s).data();
                if self.wants(*x) {
                    let gx = gd.chunks_exact(w).zip(sv).flat_map(|(row, &f)| row.iter().map(move |v| v * f)).collect();
                    accumulate(grads, *x, xv.shape(), gx);
                }
                if self.wants(*s) {
                    let gs = gd
                        .chunks_exact(w)
                        .zip(xv.data().chunks_exact(w))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(grads, *s, &[sv.len()], gs);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let leak = self.fault == Some(Fault::ReluLeak);
                    let gx = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, &x)| if x > 0.0 || leak { *g } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, g.shape(), gx);
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let gx = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(grads, *a, g.shape(), gx);
                }
            }
            Op::Gather { x, index } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let w = self.value(*x).row_len();
                    let mut gx = vec![0.0; numel(xs)];
                    for (row, &i) in gd.chunks_exact(w).zip(index) {
                        for (o, v) in gx[i * w..(i + 1) * w].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *x, xs, gx);
                }
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let rows = gd.chunks_exact(ca + cb);
                if self.wants(*a) {
                    let ga = rows.clone().flat_map(|r| r[..ca].iter().copied()).collect();
                    accumulate(grads, *a, self.shape(*a), ga);
                }
                if self.wants(*b) {
                    let gb = rows.flat_map(|r| r[ca..].iter().copied()).collect();
                    accumulate(grads, *b, self.shape(*b), gb);
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let (k, c) = (xs[1], xs[2]);
                    let mut gx = vec![0.0; numel(xs)];
                    for (gi, (grow, arow)) in gd.chunks_exact(c).zip(argmax.chunks_exact(c)).enumerate() {
                        for ch in 0..c {
                            gx[(gi * k + arow[ch] as usize) * c + ch] += grow[ch];
                        }
                    }
                    accumulate(grads, *x, xs, gx);
                }
            }
            Op::PairwiseDiff { a, b } => {
                let (r, d) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.wants(*a) {
                    let mut ga = vec![0.0; r * d];
                    for block in gd.chunks_exact(r * d) {
                        for (o, v) in ga.iter_mut().zip(block) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *a, &[r, d], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; n * d];
                    for (ni, block) in gd.chunks_exact(r * d).enumerate() {
                        for row in block.chunks_exact(d) {
                            for (o, v) in gb[ni * d..(ni + 1) * d].iter_mut().zip(row) {
                                *o -= v;
                            }
                        }
                    }
                    accumulate(grads, *b, &[n, d], gb);
                }
            }
            Op::Idw(saved) => self.idw_backward(saved, out, gd, grads),
            Op::NormalizeRows(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    let d = xv.last_dim();
                    let mut gx = vec![0.0; xv.len()];
                    for ((o, xr), (yr, gr)) in gx
                        .chunks_exact_mut(d)
                        .zip(xv.data().chunks_exact(d))
                        .zip(out.data().chunks_exact(d).zip(gd.chunks_exact(d)))
                    {
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n > 0.0 {
                            let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, y), g) in o.iter_mut().zip(yr).zip(gr) {
                                *o = (g - y * yg) / n;
                            }
                        }
                    }
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::MeanLastDim(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    let c = xv.last_dim();
                    let gx = gd.iter().flat_map(|&g| std::iter::repeat_n(g / c as f64, c)).collect();
                    accumulate(grads, *x, xv.shape(), gx);
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    accumulate(grads, *x, self.shape(*x), gd.to_vec());
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    accumulate(grads, *x, self.shape(*x), vec![gd[0]; self.value(*x).len()]);
                }
            }
            Op::DotConst { x, c } => {
                if self.wants(*x) {
                    accumulate(grads, *x, self.shape(*x), c.data().iter().map(|v| v * gd[0]).collect());
                }
            }
            Op::CrossEntropy { logits, targets, batch } => {
                if self.wants(*logits) {
                    let lv = self.value(*logits);
                    let k = lv.last_dim();
                    let scale = gd[0] / *batch as f64;
                    let mut gl = vec![0.0; lv.len()];
                    for ((o, row), t) in gl.chunks_exact_mut(k).zip(lv.data().chunks_exact(k)).zip(targets.chunks_exact(k)) {
                        let lse = log_sum_exp(row);
                        for c in 0..k {
                            o[c] = ((row[c] - lse).exp() - t[c]) * scale;
                        }
                    }
                    accumulate(grads, *logits, lv.shape(), gl);
                }
            }
        }
        Ok(())
    }

    fn idw_backward(&self, s: &IdwSaved, out: &Tensor, gd: &[f64], grads: &mut [Option<Tensor>]) {
        let fv = self.value(s.features);
        let c = fv.last_dim();
        let qv = self.value(s.query).data();
        let want_q = self.wants(s.query);
        let want_f = self.wants(s.features);
        let mut gq = vec![0.0; qv.len()];
        let mut gf = vec![0.0; fv.len()];
        for (qi, idx) in s.neighbors.chunks_exact(s.k).enumerate() {
            let q = [qv[qi * 3], qv[qi * 3 + 1], qv[qi * 3 + 2]];
            let g = &gd[qi * c..(qi + 1) * c];
            let f = &out.data()[qi * c..(qi + 1) * c];
            let dists: Vec<f64> = idx.iter().map(|&i| dist2(&q, &s.support[i]).sqrt()).collect();
            let total: f64 = dists.iter().map(|d| 1.0 / (d + s.epsilon)).sum();
            for (&i, &d) in idx.iter().zip(&dists) {
                let w = 1.0 / (d + s.epsilon);
                let fk = &fv.data()[i * c..(i + 1) * c];
                if want_f {
                    for (o, gv) in gf[i * c..(i + 1) * c].iter_mut().zip(g) {
                        *o += gv * w / total;
                    }
                }
                if want_q && d > 0.0 {
                    let dl_dw: f64 = g.iter().zip(fk.iter().zip(f)).map(|(gv, (a, b))| gv * (a - b)).sum::<f64>() / total;
                    let coef = -dl_dw * w * w / d;
                    let p = s.support[i];
                    for a in 0..3 {
                        gq[qi * 3 + a] += coef * (q[a] - p[a]);
                    }
                }
            }
        }
        if want_q {
            accumulate(grads, s.query, self.shape(s.query), gq);
        }
        if want_f {
            accumulate(grads, s.features, fv.shape(), gf);
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts_unchecked(shape.to_vec(), data)),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
