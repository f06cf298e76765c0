//! Parameterized building blocks shared by the translator and the classifier.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{glorot_uniform, param_rng, AttentionLayout, Graph, ParamId, ParamStore, Tensor, Var};

/// Per-forward-pass state: where parameters live and whether dropout fires.
pub struct Ctx<'a> {
    pub store: &'a ParamStore,
    pub training: bool,
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Ctx<'_> {
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        g.dropout(x, self.dropout, self.training, self.rng)
    }

    pub fn param(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(self.store, id)
    }
}

/// Registers parameters, each drawn from its own name-derived stream.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
}

impl Init<'_> {
    pub fn glorot(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = glorot_uniform(shape, &mut param_rng(self.seed, name));
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::filled(shape, 1.0))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        let weight = init.glorot(&format!("{name}.weight"), &[input, output])?;
        let bias = if bias {
            Some(init.zeros(&format!("{name}.bias"), &[output])?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(g, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(g, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: init.ones(&format!("{name}.gain"), &[width])?,
            bias: init.zeros(&format!("{name}.bias"), &[width])?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &Ctx, x: Var) -> Result<Var> {
        let gain = ctx.param(g, self.gain);
        let bias = ctx.param(g, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head attention. `W_Q`, `W_K`, `W_V` are `D×D`; the columns
/// `h·P .. (h+1)·P` form head `h`'s `D×P` projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        Ok(MultiHeadAttention {
            query: init.glorot(&format!("{name}.wq"), &[d_model, d_model])?,
            key: init.glorot(&format!("{name}.wk"), &[d_model, d_model])?,
            value: init.glorot(&format!("{name}.wv"), &[d_model, d_model])?,
            output: Linear::new(init, &format!("{name}.wo"), d_model, d_model, false)?,
            heads,
        })
    }

    /// Returns the projected output and the attention node (whose stored
    /// weights feed [`super::AttentionRecord`]s).
    pub fn forward(
        &self,
        g: &mut Graph,
        ctx: &Ctx,
        queries: Var,
        memory: Var,
        layout: AttentionLayout,
    ) -> Result<(Var, Var)> {
        let (wq, wk, wv) = (ctx.param(g, self.query), ctx.param(g, self.key), ctx.param(g, self.value));
        let q = g.matmul(queries, wq)?;
        let k = g.matmul(memory, wk)?;
        let v = g.matmul(memory, wv)?;
        let attn = g.attention(q, k, v, self.heads, layout)?;
        let out = self.output.forward(g, ctx, attn)?;
        Ok((out, attn))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, d_model: usize, width: usize) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(init, &format!("{name}.ff1"), d_model, width, true)?,
            outer: Linear::new(init, &format!("{name}.ff2"), width, d_model, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &Ctx, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, ctx, x)?;
        let h = g.relu(h);
        self.outer.forward(g, ctx, h)
    }
}

/// `LayerNorm(x + Dropout(sublayer))`
fn residual(g: &mut Graph, ctx: &mut Ctx, norm: &LayerNorm, x: Var, sub: Var) -> Result<Var> {
    let sub = ctx.dropout(g, sub)?;
    let sum = g.add(x, sub)?;
    norm.forward(g, ctx, sum)
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init, name: &str, d_model: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(init, &format!("{name}.self"), d_model, heads)?,
            norm1: LayerNorm::new(init, &format!("{name}.ln1"), d_model)?,
            ffn: FeedForward::new(init, name, d_model, ffn)?,
            norm2: LayerNorm::new(init, &format!("{name}.ln2"), d_model)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &mut Ctx, x: Var, layout: &AttentionLayout) -> Result<(Var, Var)> {
        let (a, weights) = self.attention.forward(g, ctx, x, x, layout.clone())?;
        let x = residual(g, ctx, &self.norm1, x, a)?;
        let f = self.ffn.forward(g, ctx, x)?;
        let x = residual(g, ctx, &self.norm2, x, f)?;
        Ok((x, weights))
    }
}

/// A stack of encoder subunits; the classifier reuses it unchanged.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderStack {
    pub fn new(init: &mut Init, name: &str, depth: usize, d_model: usize, heads: usize, ffn: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| EncoderLayer::new(init, &format!("{name}.{l}"), d_model, heads, ffn))
            .collect::<Result<_>>()?;
        Ok(EncoderStack { layers })
    }

    /// Runs every layer over `x` (`batch·len × D`), masking keys past each
    /// sequence's length. Returns the output and one attention node per layer.
    pub fn forward(&self, g: &mut Graph, ctx: &mut Ctx, mut x: Var, lens: &[usize], len: usize) -> Result<(Var, Vec<Var>)> {
        let layout = AttentionLayout {
            batch: lens.len(),
            q_len: len,
            k_len: len,
            key_lens: lens.to_vec(),
            causal: false,
        };
        let mut weights = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(g, ctx, x, &layout)?;
            x = y;
            weights.push(w);
        }
        Ok((x, weights))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(init: &mut Init, name: &str, d_model: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(DecoderLayer {
            self_attention: MultiHeadAttention::new(init, &format!("{name}.self"), d_model, heads)?,
            norm1: LayerNorm::new(init, &format!("{name}.ln1"), d_model)?,
            cross_attention: MultiHeadAttention::new(init, &format!("{name}.cross"), d_model, heads)?,
            norm2: LayerNorm::new(init, &format!("{name}.ln2"), d_model)?,
            ffn: FeedForward::new(init, name, d_model, ffn)?,
            norm3: LayerNorm::new(init, &format!("{name}.ln3"), d_model)?,
        })
    }

    /// Returns the output plus the self- and cross-attention nodes.
    pub fn forward(
        &self,
        g: &mut Graph,
        ctx: &mut Ctx,
        x: Var,
        memory: Var,
        self_layout: &AttentionLayout,
        cross_layout: &AttentionLayout,
    ) -> Result<(Var, Var, Var)> {
        let (a, self_w) = self.self_attention.forward(g, ctx, x, x, self_layout.clone())?;
        let x = residual(g, ctx, &self.norm1, x, a)?;
        let (c, cross_w) = self.cross_attention.forward(g, ctx, x, memory, cross_layout.clone())?;
        let x = residual(g, ctx, &self.norm2, x, c)?;
        let f = self.ffn.forward(g, ctx, x)?;
        let x = residual(g, ctx, &self.norm3, x, f)?;
        Ok((x, self_w, cross_w))
    }
}

/// Sinusoidal position encodings for positions `0..len` over `width` columns.
pub fn sinusoidal_positions(len: usize, width: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, width]);
    let data = t.data_mut();
    for pos in 0..len {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
            data[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}
