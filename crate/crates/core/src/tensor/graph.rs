use std::collections::HashMap;

use rand::Rng;

use super::kernels::{axpy, dot, matmul, matmul_at_acc, matmul_bt, transpose};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How the rows of a batched attention call are laid out.
///
/// Queries are `batch × q_len` rows and keys/values `batch × k_len` rows,
/// sequence-major. Keys at or beyond `key_lens[b]` are masked; with `causal`
/// set, query `i` also cannot see keys `j > i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub key_lens: Vec<usize>,
    pub causal: bool,
}

impl AttentionLayout {
    pub fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        j < self.key_lens[b] && (!self.causal || j <= i)
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Transpose(Var),
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, eps: f64, pad: usize, probs: Vec<f64>, count: usize },
    Attention { q: Var, k: Var, v: Var, heads: usize, layout: AttentionLayout, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations as they run so that [`Graph::backward`] can replay
/// them in reverse. One graph per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    no_grad: bool,
}

/// Gradients of a loss with respect to every recorded value that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds parameter gradients into the store (accumulating, not overwriting).
    pub fn accumulate(&self, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn expect_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph for inference: parameters are read as constants and nothing
    /// is differentiable.
    pub fn inference() -> Self {
        Graph {
            no_grad: true,
            ..Self::default()
        }
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        let rg = !self.no_grad;
        self.push(value, Op::Leaf, rg)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Reads a parameter once per graph; frozen parameters are recorded as
    /// constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), !p.frozen && !self.no_grad);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_2d("matmul", self.value(a))?;
        let (k2, n) = expect_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let c = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], c)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = expect_2d("add_row", self.value(a))?;
        if self.value(row).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.shape(a), data).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// Concatenates matrices along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let (rows0, cols0) = expect_2d("concat", self.value(first))?;
        for &p in &parts[1..] {
            let (r, c) = expect_2d("concat", self.value(p))?;
            let ok = match axis {
                0 => c == cols0,
                1 => r == rows0,
                _ => false,
            };
            if !ok {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
        }
        let out = match axis {
            0 => {
                let rows = parts.iter().map(|&p| self.value(p).rows()).sum::<usize>();
                let data = parts
                    .iter()
                    .flat_map(|&p| self.value(p).data().iter().copied())
                    .collect();
                Tensor::new(&[rows, cols0], data)?
            }
            _ => {
                let cols = parts.iter().map(|&p| self.value(p).cols()).sum::<usize>();
                let mut data = Vec::with_capacity(rows0 * cols);
                for i in 0..rows0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::new(&[rows0, cols], data)?
            }
        };
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = expect_2d("transpose", self.value(a))?;
        let t = Tensor::new(&[c, r], transpose(self.value(a).data(), r, c))?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = if max == f64::NEG_INFINITY { 0.0 } else { (src[at(j)] - max).exp() };
                    out[at(j)] = e;
                    total += e;
                }
                if total > 0.0 {
                    for j in 0..n {
                        out[at(j)] /= total;
                    }
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, outer, n, inner }, rg))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, n) = expect_2d("layer_norm", self.value(x))?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        let t = Tensor::new(&[rows, n], out)?;
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let rg = self.needs(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Inverted dropout. Identity when not training or when `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x), data)?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Row gather: `out[i] = table[ids[i]]`. Equivalent to multiplying the
    /// table by one-hot selectors.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, width) = expect_2d("gather", self.value(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Invalid(format!("row id {bad} out of range for {rows} rows")));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * width);
        for &i in ids {
            data.extend_from_slice(src.row(i));
        }
        let t = Tensor::new(&[ids.len(), width], data)?;
        let rg = self.needs(table);
        Ok(self.push(t, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean label-smoothed cross-entropy over rows whose target is not
    /// `pad`. The smoothed target puts `1 − eps` on the gold id and
    /// `eps / (V − 1)` on each other id.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], eps: f64, pad: usize) -> Result<Var> {
        let (rows, v) = expect_2d("cross_entropy", self.value(logits))?;
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Invalid(format!("label smoothing {eps} outside [0, 1)")));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Invalid(format!("target {bad} out of range for {v} classes")));
        }
        let off = if v > 1 { eps / (v - 1) as f64 } else { 0.0 };
        let src = self.value(logits).data();
        let mut probs = vec![0.0; rows * v];
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..rows {
            let row = &src[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..v {
                probs[r * v + j] = (row[j] - lse).exp();
            }
            if targets[r] == pad {
                continue;
            }
            count += 1;
            for (j, &x) in row.iter().enumerate() {
                let q = if j == targets[r] { 1.0 - eps } else { off };
                if q != 0.0 {
                    total -= q * (x - lse);
                }
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                eps,
                pad,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Batched multi-head scaled dot-product attention. `q`, `k`, `v` hold
    /// all heads side by side in their columns; head `h` uses columns
    /// `h·P .. (h+1)·P` and scores are scaled by `1/√P`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, layout: AttentionLayout) -> Result<Var> {
        let (qr, width) = expect_2d("attention", self.value(q))?;
        let (kr, kw) = expect_2d("attention", self.value(k))?;
        if self.shape(k) != self.shape(v) || kw != width {
            return Err(Error::shape("attention", self.shape(k), self.shape(v)));
        }
        if heads == 0 || width % heads != 0 {
            return Err(Error::Invalid(format!("{width} columns do not split into {heads} heads")));
        }
        let AttentionLayout { batch, q_len, k_len, .. } = layout;
        if qr != batch * q_len || kr != batch * k_len || layout.key_lens.len() != batch {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        let p = width / heads;
        let scale = 1.0 / (p as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * q_len * k_len];
        let mut out = vec![0.0; qr * width];
        let mut scores = vec![0.0; k_len];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * p..(h + 1) * p;
                for i in 0..q_len {
                    let qrow = &qd[(b * q_len + i) * width..][cols.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..k_len {
                        scores[j] = if layout.allowed(b, i, j) {
                            let krow = &kd[(b * k_len + j) * width..][cols.clone()];
                            dot(qrow, krow) * scale
                        } else {
                            f64::NEG_INFINITY
                        };
                        max = max.max(scores[j]);
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let prow = &mut probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let orow = &mut out[(b * q_len + i) * width..][cols.clone()];
                    for j in 0..k_len {
                        let w = scores[j] / total;
                        prow[j] = w;
                        if w != 0.0 {
                            axpy(w, &vd[(b * k_len + j) * width..][cols.clone()], orow);
                        }
                    }
                }
            }
        }
        let rg = self.needs(q) || self.needs(k) || self.needs(v);
        let t = Tensor::new(&[qr, width], out)?;
        Ok(self.push(t, Op::Attention { q, k, v, heads, layout, probs }, rg))
    }

    /// Softmax weights stored by an [`Graph::attention`] node, laid out as
    /// `batch × heads × q_len × k_len`.
    pub fn attention_weights(&self, v: Var) -> Option<(&[f64], usize, &AttentionLayout)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, heads, layout, .. } => Some((probs, *heads, layout)),
            _ => None,
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.push((idx, *id)),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                    let n = self.value(*b).cols();
                    if self.needs(*a) {
                        let da = matmul_bt(gd, self.value(*b).data(), m, n, k);
                        self.acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; k * n];
                        matmul_at_acc(&mut db, self.value(*a).data(), gd, k, m, n);
                        self.acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, gd.to_vec());
                    self.acc(&mut grads, *b, gd.to_vec());
                }
                Op::AddRow(a, row) => {
                    self.acc(&mut grads, *a, gd.to_vec());
                    if self.needs(*row) {
                        let n = self.value(*row).len();
                        let mut dr = vec![0.0; n];
                        for chunk in gd.chunks(n) {
                            axpy(1.0, chunk, &mut dr);
                        }
                        self.acc(&mut grads, *row, dr);
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, gd.iter().zip(bd).map(|(g, y)| g * y).collect());
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, gd.iter().zip(ad).map(|(g, x)| g * x).collect());
                    }
                }
                Op::Scale(a, c) => {
                    self.acc(&mut grads, *a, gd.iter().map(|g| g * c).collect());
                }
                Op::Concat { parts, axis } => {
                    let cols = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let (pr, pc) = (pv.rows(), pv.cols());
                        let dp: Vec<f64> = if *axis == 0 {
                            gd[offset * cols..(offset + pr) * cols].to_vec()
                        } else {
                            (0..pr)
                                .flat_map(|i| gd[i * cols + offset..i * cols + offset + pc].iter().copied())
                                .collect()
                        };
                        offset += if *axis == 0 { pr } else { pc };
                        self.acc(&mut grads, p, dp);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    self.acc(&mut grads, *a, transpose(gd, r, c));
                }
                Op::Softmax { x, outer, n, inner } => {
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let s: f64 = (0..*n).map(|j| gd[at(j)] * y[at(j)]).sum();
                            for j in 0..*n {
                                dx[at(j)] = y[at(j)] * (gd[at(j)] - s);
                            }
                        }
                    }
                    self.acc(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let n = node.value.cols();
                    let gv = self.value(*gain).data();
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = vec![0.0; n];
                        let mut db = vec![0.0; n];
                        for (gr, hr) in gd.chunks(n).zip(xhat.chunks(n)) {
                            for j in 0..n {
                                dg[j] += gr[j] * hr[j];
                                db[j] += gr[j];
                            }
                        }
                        self.acc(&mut grads, *gain, dg);
                        self.acc(&mut grads, *bias, db);
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; gd.len()];
                        let nf = n as f64;
                        for (r, (gr, hr)) in gd.chunks(n).zip(xhat.chunks(n)).enumerate() {
                            let mut mean_d = 0.0;
                            let mut mean_dh = 0.0;
                            for j in 0..n {
                                let d = gr[j] * gv[j];
                                mean_d += d;
                                mean_dh += d * hr[j];
                            }
                            mean_d /= nf;
                            mean_dh /= nf;
                            for j in 0..n {
                                let d = gr[j] * gv[j];
                                dx[r * n + j] = inv_std[r] * (d - mean_d - hr[j] * mean_dh);
                            }
                        }
                        self.acc(&mut grads, *x, dx);
                    }
                }
                Op::Relu(x) => {
                    let xd = self.value(*x).data();
                    let dx = gd.iter().zip(xd).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                    self.acc(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    self.acc(&mut grads, *x, gd.iter().zip(mask).map(|(g, m)| g * m).collect());
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let w = tv.cols();
                    let mut dt = vec![0.0; tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &gd[r * w..(r + 1) * w], &mut dt[id * w..(id + 1) * w]);
                    }
                    self.acc(&mut grads, *table, dt);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    self.acc(&mut grads, *x, vec![gd[0]; n]);
                }
                Op::CrossEntropy { logits, targets, eps, pad, probs, count } => {
                    let v = self.value(*logits).cols();
                    let mut dl = vec![0.0; probs.len()];
                    if *count > 0 {
                        let off = if v > 1 { eps / (v - 1) as f64 } else { 0.0 };
                        let s = gd[0] / *count as f64;
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *pad {
                                continue;
                            }
                            for j in 0..v {
                                let q = if j == t { 1.0 - eps } else { off };
                                dl[r * v + j] = s * (probs[r * v + j] - q);
                            }
                        }
                    }
                    self.acc(&mut grads, *logits, dl);
                }
                Op::Attention { q, k, v, heads, layout, probs } => {
                    let (dq, dk, dv) = self.attention_backward(gd, *q, *k, *v, *heads, layout, probs);
                    self.acc(&mut grads, *q, dq);
                    self.acc(&mut grads, *k, dk);
                    self.acc(&mut grads, *v, dv);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        gd: &[f64],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: &AttentionLayout,
        probs: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let width = self.value(q).cols();
        let p = width / heads;
        let scale = 1.0 / (p as f64).sqrt();
        let AttentionLayout { batch, q_len, k_len, .. } = *layout;
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut ds = vec![0.0; k_len];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * p..(h + 1) * p;
                for i in 0..q_len {
                    let prow = &probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let qi = (b * q_len + i) * width;
                    let grow = &gd[qi..][cols.clone()];
                    let mut weighted = 0.0;
                    for j in 0..k_len {
                        if prow[j] == 0.0 {
                            ds[j] = 0.0;
                            continue;
                        }
                        let kj = (b * k_len + j) * width;
                        let dp = dot(grow, &vd[kj..][cols.clone()]);
                        ds[j] = dp;
                        weighted += dp * prow[j];
                        axpy(prow[j], grow, &mut dv[kj..][cols.clone()]);
                    }
                    for j in 0..k_len {
                        if prow[j] == 0.0 {
                            continue;
                        }
                        let d = prow[j] * (ds[j] - weighted) * scale;
                        let kj = (b * k_len + j) * width;
                        axpy(d, &kd[kj..][cols.clone()], &mut dq[qi..][cols.clone()]);
                        axpy(d, &qd[qi..][cols.clone()], &mut dk[kj..][cols.clone()]);
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => axpy(1.0, &delta, g.data_mut()),
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(v), delta).expect("gradient matches value shape"))
            }
        }
    }
}
