//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so node indices are already a
//! topological order and `backward` walks them once, in reverse.

use std::sync::Arc;

use super::{softmax_row, NnError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Embedding { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    SquaredRelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<f64>, rstd: Vec<f64> },
    CausalConv { x: Var, kernel: Var },
    SliceLast { x: Var, start: usize },
    ConcatLast(Vec<Var>),
    Softmax { x: Var },
    Attention { q: Var, k: Var, v: Var, n_heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    WeightedSum { x: Var, weights: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded computation. Leaves receive gradients after [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize), NnError> {
    match *t.shape() {
        [b, s, c] => Ok((b, s, c)),
        ref other => Err(NnError::shape(op, format!("expected [batch, seq, channels], got {other:?}"))),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// `x · w + b` along the last axis. `x: [.., din]`, `w: [din, dout]`, `b: [dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (din, dout) = match *wv.shape() {
            [i, o] => (i, o),
            ref s => return Err(NnError::shape("linear", format!("weight must be 2-D, got {s:?}"))),
        };
        if xv.last_dim() != din || xv.shape().is_empty() {
            return Err(NnError::shape("linear", format!("input {:?} vs weight {:?}", xv.shape(), wv.shape())));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [dout] {
                return Err(NnError::shape("linear", format!("bias {:?} vs out {dout}", self.value(b).shape())));
            }
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * dout];
        let (xd, wd) = (xv.data(), wv.data());
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            if let Some(b) = b {
                orow.copy_from_slice(self.nodes[b.0].value.data());
            }
            for (i, &xi) in xd[r * din..(r + 1) * din].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (o, &wij) in orow.iter_mut().zip(&wd[i * dout..(i + 1) * dout]) {
                    *o += xi * wij;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }))
    }

    /// Row lookup: output shape is `out_shape + [dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_shape: &[usize]) -> Result<Var, NnError> {
        let tv = self.value(table);
        let (vocab, dim) = match *tv.shape() {
            [v, d] => (v, d),
            ref s => return Err(NnError::shape("embedding", format!("table must be 2-D, got {s:?}"))),
        };
        if out_shape.iter().product::<usize>() != ids.len() {
            return Err(NnError::shape("embedding", format!("{} ids for shape {out_shape:?}", ids.len())));
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(NnError::shape("embedding", format!("id {id} >= vocab {vocab}")));
            }
            out.extend_from_slice(&tv.data()[id * dim..(id + 1) * dim]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(dim);
        Ok(self.push(Tensor::new(shape, out)?, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise `max(x, 0)^2`.
    pub fn squared_relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| if v > 0.0 { v * v } else { 0.0 }).collect();
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::SquaredRelu(x))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return Err(NnError::shape("layer_norm", format!("gain/bias must be [{d}]")));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.rows();
        let mut out = vec![0.0; xv.numel()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for (j, o) in out[r * d..(r + 1) * d].iter_mut().enumerate() {
                *o = (row[j] - mean) * rstd * g[j] + b[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, mean: means, rstd: rstds }))
    }

    /// Per-channel convolution along the sequence axis with `k - 1` zeros of
    /// left padding: `y[t, c] = sum_j kernel[j, c] * x[t - (k - 1) + j, c]`.
    /// `x: [batch, seq, channels]`, `kernel: [k, channels]`.
    pub fn causal_depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (bsz, seq, ch) = dims3(xv, "causal_depthwise_conv1d")?;
        let kv = self.value(kernel);
        let k = match *kv.shape() {
            [k, c] if c == ch && k >= 1 => k,
            ref s => return Err(NnError::shape("causal_depthwise_conv1d", format!("kernel {s:?} for {ch} channels"))),
        };
        let mut out = vec![0.0; xv.numel()];
        let (xd, kd) = (xv.data(), kv.data());
        for b in 0..bsz {
            for t in 0..seq {
                let orow = &mut out[(b * seq + t) * ch..(b * seq + t + 1) * ch];
                for j in 0..k {
                    // input index t - (k-1) + j
                    let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                    let xrow = &xd[(b * seq + src) * ch..(b * seq + src + 1) * ch];
                    let krow = &kd[j * ch..(j + 1) * ch];
                    for c in 0..ch {
                        orow[c] += krow[c] * xrow[c];
                    }
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::CausalConv { x, kernel }))
    }

    /// Channels `[start, end)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if start >= end || end > d {
            return Err(NnError::shape("slice_last", format!("[{start}, {end}) of {d}")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(xv.rows() * w);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.data()[r * d + start..r * d + end]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceLast { x, start }))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts.first().ok_or_else(|| NnError::shape("concat_last", "no inputs"))?;
        let lead = self.value(*first).shape()[..self.value(*first).shape().len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(NnError::shape("concat_last", format!("{s:?} vs leading {lead:?}")));
            }
            total += s[s.len() - 1];
        }
        let rows = self.value(*first).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                let d = pv.last_dim();
                out.extend_from_slice(&pv.data()[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatLast(parts.to_vec())))
    }

    /// Softmax over the last axis with an optional additive mask whose shape
    /// is a suffix of the input shape.
    pub fn softmax(&mut self, x: Var, mask: Option<&Tensor>) -> Result<Var, NnError> {
        let value = super::softmax_lastaxis(self.value(x), mask)?;
        Ok(self.push(value, Op::Softmax { x }))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q, k, v: [batch, seq, d]` split into `n_heads` contiguous head slices;
    /// `bias: [n_heads, seq, seq]` is added to the scores (use `-inf` to mask).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, bias: Arc<Tensor>, n_heads: usize) -> Result<Var, NnError> {
        let (bsz, seq, d) = dims3(self.value(q), "attention")?;
        if self.value(k).shape() != [bsz, seq, d] || self.value(v).shape() != [bsz, seq, d] {
            return Err(NnError::shape("attention", "q, k, v shapes differ"));
        }
        if n_heads == 0 || d % n_heads != 0 {
            return Err(NnError::shape("attention", format!("d={d} not divisible by {n_heads} heads")));
        }
        if bias.shape() != [n_heads, seq, seq] {
            return Err(NnError::shape("attention", format!("bias {:?} for {n_heads} heads, seq {seq}", bias.shape())));
        }
        let hd = d / n_heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let bd = bias.data();
        let mut probs = vec![0.0; bsz * n_heads * seq * seq];
        let mut out = vec![0.0; bsz * seq * d];
        let mut scores = vec![0.0; seq];
        for b in 0..bsz {
            for h in 0..n_heads {
                let off = h * hd;
                for i in 0..seq {
                    let qrow = &qd[(b * seq + i) * d + off..(b * seq + i) * d + off + hd];
                    let brow = &bd[(h * seq + i) * seq..(h * seq + i + 1) * seq];
                    for j in 0..seq {
                        scores[j] = if brow[j] == f64::NEG_INFINITY {
                            f64::NEG_INFINITY
                        } else {
                            let krow = &kd[(b * seq + j) * d + off..(b * seq + j) * d + off + hd];
                            dot(qrow, krow) * scale + brow[j]
                        };
                    }
                    let prow = &mut probs[((b * n_heads + h) * seq + i) * seq..((b * n_heads + h) * seq + i + 1) * seq];
                    softmax_row(&scores, prow).map_err(|_| NnError::AllMasked { row: i })?;
                    let orow = &mut out[(b * seq + i) * d + off..(b * seq + i) * d + off + hd];
                    for (j, &p) in prow.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let vrow = &vd[(b * seq + j) * d + off..(b * seq + j) * d + off + hd];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![bsz, seq, d], out)?;
        Ok(self.push(value, Op::Attention { q, k, v, n_heads, probs }))
    }

    /// Mean negative log-likelihood (nats) over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, NnError> {
        let lv = self.value(logits);
        let vocab = lv.last_dim();
        if lv.rows() != targets.len() {
            return Err(NnError::shape("cross_entropy", format!("{} rows vs {} targets", lv.rows(), targets.len())));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(NnError::NoTargets);
        }
        let mut probs = vec![0.0; lv.numel()];
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= vocab {
                return Err(NnError::shape("cross_entropy", format!("target {t} >= vocab {vocab}")));
            }
            let row = &lv.data()[r * vocab..(r + 1) * vocab];
            let prow = &mut probs[r * vocab..(r + 1) * vocab];
            softmax_row(row, prow).map_err(|_| NnError::AllMasked { row: r })?;
            total -= log_softmax_at(row, t);
        }
        let value = Tensor::scalar(total / count as f64);
        Ok(self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }))
    }

    /// `sum(x * weights)` as a scalar; used to reduce tensors for checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(NnError::shape("weighted_sum", format!("{:?} vs {:?}", xv.shape(), weights.shape())));
        }
        let s = dot(xv.data(), weights.data());
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&mut self, target: Var) -> Result<(), NnError> {
        if self.value(target).numel() != 1 {
            return Err(NnError::NotScalar);
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[target.0] = Some(Tensor::full(self.value(target).shape(), 1.0));
        for idx in (0..=target.0).rev() {
            let Some(grad) = self.grads[idx].take() else { continue };
            self.propagate(idx, &grad);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.grads[idx] = Some(grad);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        let shape = self.nodes[v.0].value.shape();
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(Tensor::new(shape.to_vec(), delta).expect("grad shape")),
        }
    }

    fn propagate(&mut self, idx: usize, grad: &Tensor) {
        let gd = grad.data();
        // temporarily take the op to avoid borrowing self twice
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let mut dx = vec![0.0; rows * din];
                let mut dw = vec![0.0; din * dout];
                for r in 0..rows {
                    let grow = &gd[r * dout..(r + 1) * dout];
                    let xrow = &xv.data()[r * din..(r + 1) * din];
                    for i in 0..din {
                        let wrow = &wv.data()[i * dout..(i + 1) * dout];
                        dx[r * din + i] = dot(grow, wrow);
                        let xi = xrow[i];
                        if xi != 0.0 {
                            for (a, &g) in dw[i * dout..(i + 1) * dout].iter_mut().zip(grow) {
                                *a += xi * g;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; dout];
                    for r in 0..rows {
                        for (a, &g) in db.iter_mut().zip(&gd[r * dout..(r + 1) * dout]) {
                            *a += g;
                        }
                    }
                    self.accumulate(*b, db);
                }
                self.accumulate(*x, dx);
                self.accumulate(*w, dw);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let dim = tv.shape()[1];
                let mut dt = vec![0.0; tv.numel()];
                for (n, &id) in ids.iter().enumerate() {
                    for (a, &g) in dt[id * dim..(id + 1) * dim].iter_mut().zip(&gd[n * dim..(n + 1) * dim]) {
                        *a += g;
                    }
                }
                self.accumulate(*table, dt);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, gd.to_vec());
                self.accumulate(*b, gd.to_vec());
            }
            Op::SquaredRelu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v > 0.0 { 2.0 * v * g } else { 0.0 })
                    .collect();
                self.accumulate(*x, dx);
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; xv.numel()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut gh = vec![0.0; d];
                for r in 0..xv.rows() {
                    let row = &xv.data()[r * d..(r + 1) * d];
                    let grow = &gd[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean[r]) * rstd[r];
                        gh[j] = grow[j] * gv[j];
                        dg[j] += grow[j] * xhat[j];
                        db[j] += grow[j];
                    }
                    let mean_gh = gh.iter().sum::<f64>() / d as f64;
                    let mean_ghx = dot(&gh, &xhat) / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd[r] * (gh[j] - mean_gh - xhat[j] * mean_ghx);
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*gain, dg);
                self.accumulate(*bias, db);
            }
            Op::CausalConv { x, kernel } => {
                let xv = self.value(*x);
                let (bsz, seq, ch) = dims3(xv, "conv").expect("checked in forward");
                let kv = self.value(*kernel);
                let k = kv.shape()[0];
                let mut dx = vec![0.0; xv.numel()];
                let mut dk = vec![0.0; kv.numel()];
                for b in 0..bsz {
                    for t in 0..seq {
                        let grow = &gd[(b * seq + t) * ch..(b * seq + t + 1) * ch];
                        for j in 0..k {
                            let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                            let base = (b * seq + src) * ch;
                            for c in 0..ch {
                                dx[base + c] += kv.data()[j * ch + c] * grow[c];
                                dk[j * ch + c] += xv.data()[base + c] * grow[c];
                            }
                        }
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*kernel, dk);
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let w = grad.last_dim();
                let mut dx = vec![0.0; xv.numel()];
                for r in 0..xv.rows() {
                    dx[r * d + start..r * d + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                self.accumulate(*x, dx);
            }
            Op::ConcatLast(parts) => {
                let total = grad.last_dim();
                let rows = grad.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(p, dp);
                    offset += w;
                }
            }
            Op::Softmax { x } => {
                let pv = &self.nodes[idx].value;
                let d = pv.last_dim();
                let mut dx = vec![0.0; pv.numel()];
                for r in 0..pv.rows() {
                    let p = &pv.data()[r * d..(r + 1) * d];
                    let g = &gd[r * d..(r + 1) * d];
                    let s = dot(p, g);
                    for j in 0..d {
                        dx[r * d + j] = p[j] * (g[j] - s);
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Attention { q, k, v, n_heads, probs } => {
                let (bsz, seq, d) = dims3(self.value(*q), "attention").expect("checked in forward");
                let hd = d / n_heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; qd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut dv = vec![0.0; vd.len()];
                let mut dp = vec![0.0; seq];
                for b in 0..bsz {
                    for h in 0..*n_heads {
                        let off = h * hd;
                        for i in 0..seq {
                            let prow = &probs[((b * n_heads + h) * seq + i) * seq..((b * n_heads + h) * seq + i + 1) * seq];
                            let grow = &gd[(b * seq + i) * d + off..(b * seq + i) * d + off + hd];
                            let mut s = 0.0;
                            for j in 0..seq {
                                if prow[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let vbase = (b * seq + j) * d + off;
                                dp[j] = dot(grow, &vd[vbase..vbase + hd]);
                                s += prow[j] * dp[j];
                                for (a, &g) in dv[vbase..vbase + hd].iter_mut().zip(grow) {
                                    *a += prow[j] * g;
                                }
                            }
                            let qbase = (b * seq + i) * d + off;
                            for j in 0..seq {
                                if prow[j] == 0.0 {
                                    continue;
                                }
                                let ds = prow[j] * (dp[j] - s) * scale;
                                let kbase = (b * seq + j) * d + off;
                                for c in 0..hd {
                                    dq[qbase + c] += ds * kd[kbase + c];
                                    dk[kbase + c] += ds * qd[qbase + c];
                                }
                            }
                        }
                    }
                }
                self.accumulate(*q, dq);
                self.accumulate(*k, dk);
                self.accumulate(*v, dv);
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let vocab = self.value(*logits).last_dim();
                let scale = gd[0] / *count as f64;
                let mut dl = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..vocab {
                        dl[r * vocab + j] = probs[r * vocab + j] * scale;
                    }
                    dl[r * vocab + t] -= scale;
                }
                self.accumulate(*logits, dl);
            }
            Op::WeightedSum { x, weights } => {
                let dx = weights.data().iter().map(|w| w * gd[0]).collect();
                self.accumulate(*x, dx);
            }
        }
        self.nodes[idx].op = op;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log softmax(row)[t]`, max-subtracted.
pub(crate) fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[t] - lse
}
