//! Encoder-only classifier with POS embeddings fused into the token
//! embeddings, reading its prediction off the `[CLS]` position.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::layers::{Ctx, EncoderStack, Init, LayerNorm, Linear};
use crate::tensor::{adam_step, seeded_rng, AdamConfig, AdamState, Graph, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::{CLS, PAD, SEP};

const DROPOUT_STREAM: u64 = 0xb3a7_d20f;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BertFusion {
    /// `h = e + f` with a `D`-wide POS table.
    Sum,
    /// `h = [e ; f] A + c` with a learned `(D+d)×D` map.
    ConcatAffine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BertConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// POS embedding width `d`.
    pub pos_dim: usize,
    pub use_pos: bool,
    pub fusion: BertFusion,
    pub num_classes: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub pos_vocab_size: usize,
    pub dropout: f64,
}

impl BertConfig {
    pub fn toy(vocab_size: usize, pos_vocab_size: usize, num_classes: usize) -> Self {
        BertConfig {
            layers: 2,
            d_model: 32,
            heads: 4,
            ffn_width: 64,
            pos_dim: 32,
            use_pos: true,
            fusion: BertFusion::Sum,
            num_classes,
            max_positions: 64,
            vocab_size,
            pos_vocab_size,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.use_pos {
            match self.fusion {
                BertFusion::Sum if self.pos_dim != self.d_model => {
                    return fail(format!("sum fusion needs pos_dim == d_model, got {}", self.pos_dim))
                }
                BertFusion::ConcatAffine if self.pos_dim == 0 => return fail("concat-affine needs pos_dim > 0".into()),
                _ => {}
            }
        }
        if self.num_classes < 2 || self.max_positions < 3 {
            return fail("need at least 2 classes and 3 positions".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn write_manifest(&self, m: &mut Manifest) {
        m.set("layers", self.layers);
        m.set("d_model", self.d_model);
        m.set("heads", self.heads);
        m.set("ffn_width", self.ffn_width);
        m.set("pos_dim", self.pos_dim);
        m.set("use_pos", self.use_pos);
        m.set(
            "fusion",
            match self.fusion {
                BertFusion::Sum => "sum",
                BertFusion::ConcatAffine => "concat-affine",
            },
        );
        m.set("num_classes", self.num_classes);
        m.set("max_positions", self.max_positions);
        m.set("vocab_size", self.vocab_size);
        m.set("pos_vocab_size", self.pos_vocab_size);
        m.set("dropout", self.dropout);
    }

    pub fn from_manifest(m: &Manifest, base: &BertConfig) -> Result<Self> {
        let mut c = base.clone();
        macro_rules! read {
            ($($field:ident),*) => {$(
                if let Some(v) = m.get(stringify!($field))? { c.$field = v; }
            )*};
        }
        read!(layers, d_model, heads, ffn_width, pos_dim, use_pos, num_classes, max_positions, vocab_size,
              pos_vocab_size, dropout);
        c.fusion = match m.get_str("fusion") {
            None => base.fusion,
            Some("sum") => BertFusion::Sum,
            Some("concat-affine") => BertFusion::ConcatAffine,
            Some(other) => return Err(Error::Config(format!("unknown bert fusion {other:?}"))),
        };
        Ok(c)
    }
}

/// One packed classifier input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BertInput {
    pub ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub segments: Vec<usize>,
}

impl BertInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A token sequence with one POS id per token.
#[derive(Clone, Copy, Debug)]
pub struct Tagged<'a> {
    pub ids: &'a [usize],
    pub pos_ids: &'a [usize],
}

/// Packs `[CLS] a [SEP] (b [SEP])`. When the result would exceed
/// `max_positions`, tokens are dropped from the end of the longer sequence
/// (the second on ties) until it fits.
pub fn build_input(a: Tagged, b: Option<Tagged>, max_positions: usize) -> Result<BertInput> {
    if a.ids.len() != a.pos_ids.len() || b.is_some_and(|b| b.ids.len() != b.pos_ids.len()) {
        return Err(Error::Invalid("token and POS sequences differ in length".into()));
    }
    let b = b.filter(|b| !b.ids.is_empty());
    let specials = if b.is_some() { 3 } else { 2 };
    if max_positions < specials {
        return Err(Error::Invalid(format!("max_positions {max_positions} cannot hold the special tokens")));
    }
    let (mut la, mut lb) = (a.ids.len(), b.map_or(0, |b| b.ids.len()));
    while la + lb + specials > max_positions {
        if lb >= la && lb > 0 {
            lb -= 1;
        } else {
            la -= 1;
        }
    }
    let mut input = BertInput {
        ids: vec![CLS],
        pos_ids: vec![UNK_POS_ID],
        segments: vec![0],
    };
    input.ids.extend_from_slice(&a.ids[..la]);
    input.pos_ids.extend_from_slice(&a.pos_ids[..la]);
    input.ids.push(SEP);
    input.pos_ids.push(UNK_POS_ID);
    input.segments.resize(input.ids.len(), 0);
    if let Some(b) = b {
        input.ids.extend_from_slice(&b.ids[..lb]);
        input.pos_ids.extend_from_slice(&b.pos_ids[..lb]);
        input.ids.push(SEP);
        input.pos_ids.push(UNK_POS_ID);
        input.segments.resize(input.ids.len(), 1);
    }
    Ok(input)
}

/// Id of the unknown POS tag in every tagset; `[CLS]`, `[SEP]` and padding use it.
const UNK_POS_ID: usize = 0;

/// Inputs padded to a common length, laid out sequence-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BertBatch {
    pub ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub positions: Vec<usize>,
    pub lens: Vec<usize>,
    pub len: usize,
}

impl BertBatch {
    pub fn new(inputs: &[BertInput]) -> Result<Self> {
        let len = inputs.iter().map(BertInput::len).max().unwrap_or(0);
        if len == 0 {
            return Err(Error::Invalid("empty classifier batch".into()));
        }
        let mut b = BertBatch {
            ids: Vec::new(),
            pos_ids: Vec::new(),
            segments: Vec::new(),
            positions: Vec::new(),
            lens: Vec::new(),
            len,
        };
        for input in inputs {
            let n = b.lens.len() + 1;
            b.lens.push(input.len());
            b.ids.extend_from_slice(&input.ids);
            b.ids.resize(n * len, PAD);
            b.pos_ids.extend_from_slice(&input.pos_ids);
            b.pos_ids.resize(n * len, UNK_POS_ID);
            b.segments.extend_from_slice(&input.segments);
            b.segments.resize(n * len, 0);
            b.positions.extend(0..len);
        }
        Ok(b)
    }
}

#[derive(Clone, Debug)]
pub enum PosFusion {
    None,
    Sum { table: ParamId },
    ConcatAffine { table: ParamId, map: Linear },
}

#[derive(Clone, Debug)]
pub struct BertClassifier {
    pub config: BertConfig,
    pub store: ParamStore,
    pub token_embed: ParamId,
    pub pos: PosFusion,
    pub segment_embed: ParamId,
    pub position_embed: ParamId,
    pub embed_norm: LayerNorm,
    pub encoder: EncoderStack,
    pub head: Linear,
}

impl BertClassifier {
    pub fn new(config: BertConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, seed };
        let d = config.d_model;
        let token_embed = init.glorot("bert.token", &[config.vocab_size, d])?;
        let pos = match (config.use_pos, config.fusion) {
            (false, _) => PosFusion::None,
            (true, BertFusion::Sum) => PosFusion::Sum {
                table: init.glorot("bert.pos", &[config.pos_vocab_size, d])?,
            },
            (true, BertFusion::ConcatAffine) => PosFusion::ConcatAffine {
                table: init.glorot("bert.pos", &[config.pos_vocab_size, config.pos_dim])?,
                map: Linear::new(&mut init, "bert.fuse", d + config.pos_dim, d, true)?,
            },
        };
        let segment_embed = init.glorot("bert.segment", &[2, d])?;
        let position_embed = init.glorot("bert.position", &[config.max_positions, d])?;
        let embed_norm = LayerNorm::new(&mut init, "bert.ln", d)?;
        let encoder = EncoderStack::new(&mut init, "bert.enc", config.layers, d, config.heads, config.ffn_width)?;
        let head = Linear::new(&mut init, "bert.cls", d, config.num_classes, true)?;
        Ok(BertClassifier {
            config,
            store,
            token_embed,
            pos,
            segment_embed,
            position_embed,
            embed_norm,
            encoder,
            head,
        })
    }

    pub fn pos_table(&self) -> Option<ParamId> {
        match self.pos {
            PosFusion::None => None,
            PosFusion::Sum { table } | PosFusion::ConcatAffine { table, .. } => Some(table),
        }
    }

    pub fn zero_and_freeze_pos(&mut self) {
        if let Some(id) = self.pos_table() {
            let p = self.store.get_mut(id);
            p.value.fill(0.0);
            p.frozen = true;
        }
    }

    pub fn ctx<'a>(&'a self, training: bool, rng: &'a mut ChaCha8Rng) -> Ctx<'a> {
        Ctx {
            store: &self.store,
            training,
            dropout: self.config.dropout,
            rng,
        }
    }

    /// Token embeddings fused with POS, plus segment and position
    /// embeddings, before the embedding layer norm.
    pub fn fused_embedding(&self, g: &mut Graph, ctx: &Ctx, batch: &BertBatch) -> Result<Var> {
        if let Some(&p) = batch.positions.iter().max() {
            if p >= self.config.max_positions {
                return Err(Error::Invalid(format!(
                    "sequence length {} exceeds max_positions {}",
                    p + 1,
                    self.config.max_positions
                )));
            }
        }
        let tokens = ctx.param(g, self.token_embed);
        let e = g.gather(tokens, &batch.ids)?;
        let h = match &self.pos {
            PosFusion::None => e,
            PosFusion::Sum { table } => {
                let t = ctx.param(g, *table);
                let f = g.gather(t, &batch.pos_ids)?;
                g.add(e, f)?
            }
            PosFusion::ConcatAffine { table, map } => {
                let t = ctx.param(g, *table);
                let f = g.gather(t, &batch.pos_ids)?;
                let cat = g.concat(&[e, f], 1)?;
                map.forward(g, ctx, cat)?
            }
        };
        let seg = ctx.param(g, self.segment_embed);
        let seg = g.gather(seg, &batch.segments)?;
        let h = g.add(h, seg)?;
        let pos = ctx.param(g, self.position_embed);
        let pos = g.gather(pos, &batch.positions)?;
        g.add(h, pos)
    }

    pub fn embed(&self, g: &mut Graph, ctx: &mut Ctx, batch: &BertBatch) -> Result<Var> {
        let h = self.fused_embedding(g, ctx, batch)?;
        let h = self.embed_norm.forward(g, ctx, h)?;
        ctx.dropout(g, h)
    }

    /// Class logits (`batch × classes`) read from each `[CLS]` row.
    pub fn logits(&self, g: &mut Graph, ctx: &mut Ctx, batch: &BertBatch) -> Result<Var> {
        let x = self.embed(g, ctx, batch)?;
        let (out, _) = self.encoder.forward(g, ctx, x, &batch.lens, batch.len)?;
        let cls_rows: Vec<usize> = (0..batch.lens.len()).map(|b| b * batch.len).collect();
        let cls = g.gather(out, &cls_rows)?;
        self.head.forward(g, ctx, cls)
    }

    /// Class probabilities for each input, dropout off.
    pub fn classify(&self, inputs: &[BertInput]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = BertBatch::new(inputs)?;
        let mut rng = seeded_rng(0);
        let mut g = Graph::inference();
        let mut ctx = self.ctx(false, &mut rng);
        let logits = self.logits(&mut g, &mut ctx, &batch)?;
        let probs = g.softmax(logits, 1)?;
        let t = g.value(probs);
        Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
    }

    pub fn loss(&self, g: &mut Graph, ctx: &mut Ctx, batch: &BertBatch, labels: &[usize]) -> Result<Var> {
        let logits = self.logits(g, ctx, batch)?;
        g.cross_entropy(logits, labels, 0.0, usize::MAX)
    }
}

/// A labelled classifier input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledInput {
    pub input: BertInput,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct BertTrainer {
    pub adam: AdamState,
    pub lr: f64,
    pub rng: ChaCha8Rng,
}

impl BertTrainer {
    pub fn new(model: &BertClassifier, lr: f64, seed: u64) -> Self {
        BertTrainer {
            adam: AdamState::new(&model.store, AdamConfig::default()),
            lr,
            rng: seeded_rng(seed ^ DROPOUT_STREAM),
        }
    }

    /// One Adam update on the mean cross-entropy of `batch`.
    pub fn finetune_step(&mut self, model: &mut BertClassifier, batch: &[LabeledInput]) -> Result<f64> {
        let inputs: Vec<BertInput> = batch.iter().map(|e| e.input.clone()).collect();
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let packed = BertBatch::new(&inputs)?;
        let mut g = Graph::new();
        let loss = {
            let mut ctx = model.ctx(true, &mut self.rng);
            model.loss(&mut g, &mut ctx, &packed, &labels)?
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("classifier loss is {value}")));
        }
        g.backward(loss)?.accumulate(&mut model.store);
        adam_step(&mut model.store, &mut self.adam, self.lr);
        model.store.zero_grad();
        Ok(value)
    }
}

/// `[[I], [0]]`: the `(D+d)×D` map that keeps the token embedding and
/// drops the POS block.
pub fn identity_fusion_map(d_model: usize, pos_dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[d_model + pos_dim, d_model]);
    for i in 0..d_model {
        t.data_mut()[i * d_model + i] = 1.0;
    }
    t
}
