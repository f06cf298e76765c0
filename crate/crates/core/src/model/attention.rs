//! Attention written directly in terms of graph primitives. The batched
//! kernel in [`Graph::attention`] is what the model runs; these compositions
//! spell out `softmax(QKᵀ/√P)V` step by step and serve as its reference.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Which key positions each query row may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::shape("mask", &[rows, cols], &[allowed.len()]));
        }
        Ok(Mask { rows, cols, allowed })
    }

    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect();
        Mask { rows: n, cols: n, allowed }
    }

    /// Keys at or past `len` are hidden from every query.
    pub fn key_padding(rows: usize, cols: usize, len: usize) -> Self {
        let allowed = (0..rows * cols).map(|k| k % cols < len).collect();
        Mask { rows, cols, allowed }
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    fn additive(&self) -> Tensor {
        let data = self
            .allowed
            .iter()
            .map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::new(&[self.rows, self.cols], data).expect("mask shape")
    }
}

/// `K = H W_K`, `Q = H W_Q`, `V = H W_V`, `A = softmax(QKᵀ/√P) V` with `P`
/// the projection width. Masked scores become −∞ before the softmax.
/// Returns `A` and the softmax weights.
pub fn attention(g: &mut Graph, h: Var, w_k: Var, w_q: Var, w_v: Var, mask: Option<&Mask>) -> Result<(Var, Var)> {
    self_or_cross(g, h, h, w_k, w_q, w_v, mask)
}

/// Queries from `hq`, keys and values from `hkv`.
pub fn self_or_cross(
    g: &mut Graph,
    hq: Var,
    hkv: Var,
    w_k: Var,
    w_q: Var,
    w_v: Var,
    mask: Option<&Mask>,
) -> Result<(Var, Var)> {
    let k = g.matmul(hkv, w_k)?;
    let q = g.matmul(hq, w_q)?;
    let v = g.matmul(hkv, w_v)?;
    let p = g.shape(k)[1];
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, 1.0 / (p as f64).sqrt());
    if let Some(mask) = mask {
        let (r, c) = (g.shape(scores)[0], g.shape(scores)[1]);
        if (mask.rows, mask.cols) != (r, c) {
            return Err(Error::shape("attention mask", &[mask.rows, mask.cols], &[r, c]));
        }
        let m = g.constant(mask.additive());
        scores = g.add(scores, m)?;
    }
    let weights = g.softmax(scores, 1)?;
    let a = g.matmul(weights, v)?;
    Ok((a, weights))
}

/// One head's `D×P` projections.
#[derive(Clone, Copy, Debug)]
pub struct HeadWeights {
    pub w_k: Var,
    pub w_q: Var,
    pub w_v: Var,
}

/// Heads run independently on the same input; their outputs are
/// concatenated and projected by `W_O`.
pub fn multi_head(g: &mut Graph, hq: Var, hkv: Var, heads: &[HeadWeights], w_o: Var, mask: Option<&Mask>) -> Result<Var> {
    let mut outs = Vec::with_capacity(heads.len());
    for hw in heads {
        let (a, _) = self_or_cross(g, hq, hkv, hw.w_k, hw.w_q, hw.w_v, mask)?;
        outs.push(a);
    }
    let cat = g.concat(&outs, 1)?;
    g.matmul(cat, w_o)
}
