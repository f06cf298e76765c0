use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, ModelConfig, CASE_VOCAB, POSTAG_VOCAB};
use super::layers::{sinusoidal_positions, Ctx, DecoderLayer, EncoderStack, Init, Linear};
use super::{AttentionKind, AttentionRecord};
use crate::annotate::FeatureTriple;
use crate::error::{Error, Result};
use crate::tensor::{
    adam_step, seeded_rng, AdamConfig, AdamState, AttentionLayout, Graph, NoamSchedule, ParamId, ParamStore,
    Tensor, Var,
};
use crate::tokenizer::{BOS, EOS, PAD};

/// Salt separating the dropout stream from parameter initialization.
const DROPOUT_STREAM: u64 = 0xd20f_0a57;

/// Source-side feature tables.
#[derive(Clone, Debug)]
pub enum FeatureTables {
    /// No feature block at all (`d = 0`).
    None,
    /// A constant zero block of the given width.
    ZeroPad(usize),
    Sum { pos: ParamId, case: ParamId, postag: ParamId },
    Concat { pos: ParamId, case: ParamId, postag: ParamId },
}

impl FeatureTables {
    pub fn param_ids(&self) -> Vec<ParamId> {
        match *self {
            FeatureTables::Sum { pos, case, postag } | FeatureTables::Concat { pos, case, postag } => {
                vec![pos, case, postag]
            }
            _ => Vec::new(),
        }
    }
}

/// One parallel training pair, already mapped to ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: Vec<usize>,
    pub features: Vec<FeatureTriple>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn tokens(&self) -> usize {
        self.target.len() + 1
    }
}

/// Padded source sentences laid out sequence-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBatch {
    pub ids: Vec<usize>,
    pub features: Vec<FeatureTriple>,
    pub lens: Vec<usize>,
    pub len: usize,
}

const PAD_FEATURE: FeatureTriple = FeatureTriple {
    pos_id: 0,
    case_id: 0,
    position_id: 3,
};

impl SourceBatch {
    pub fn new<'a>(sentences: impl IntoIterator<Item = (&'a [usize], &'a [FeatureTriple])>) -> Result<Self> {
        let sentences: Vec<_> = sentences.into_iter().collect();
        let len = sentences.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        if len == 0 {
            return Err(Error::Invalid("empty source sentence".into()));
        }
        let mut batch = SourceBatch {
            ids: Vec::with_capacity(len * sentences.len()),
            features: Vec::with_capacity(len * sentences.len()),
            lens: Vec::with_capacity(sentences.len()),
            len,
        };
        for (ids, feats) in sentences {
            if ids.len() != feats.len() {
                return Err(Error::Invalid(format!(
                    "{} subword ids but {} feature triples",
                    ids.len(),
                    feats.len()
                )));
            }
            if ids.is_empty() {
                return Err(Error::Invalid("empty source sentence".into()));
            }
            batch.lens.push(ids.len());
            batch.ids.extend_from_slice(ids);
            batch.ids.resize(batch.lens.len() * len, PAD);
            batch.features.extend_from_slice(feats);
            batch.features.resize(batch.lens.len() * len, PAD_FEATURE);
        }
        Ok(batch)
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }
}

/// Teacher-forcing view of target sentences: `input = BOS y`, `output = y EOS`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub lens: Vec<usize>,
    pub len: usize,
}

impl TargetBatch {
    pub fn new<'a>(targets: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let targets: Vec<&[usize]> = targets.into_iter().collect();
        let len = targets.iter().map(|t| t.len() + 1).max().unwrap_or(1);
        let mut b = TargetBatch {
            input: Vec::new(),
            output: Vec::new(),
            lens: Vec::new(),
            len,
        };
        for t in targets {
            let n = b.lens.len() + 1;
            b.lens.push(t.len() + 1);
            b.input.push(BOS);
            b.input.extend_from_slice(t);
            b.input.resize(n * len, PAD);
            b.output.extend_from_slice(t);
            b.output.push(EOS);
            b.output.resize(n * len, PAD);
        }
        b
    }

    /// Non-padding target positions.
    pub fn tokens(&self) -> usize {
        self.lens.iter().sum()
    }
}

/// Encoder–decoder Transformer whose source embedding is the word
/// embedding (width `D − d`) concatenated with a `d`-wide feature block.
#[derive(Clone, Debug)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub src_embed: ParamId,
    pub features: FeatureTables,
    pub tgt_embed: ParamId,
    pub encoder: EncoderStack,
    pub decoder: Vec<DecoderLayer>,
    pub output: Linear,
}

/// Attention nodes recorded during one forward pass.
#[derive(Default)]
pub struct AttentionNodes {
    pub encoder: Vec<Var>,
    pub decoder_self: Vec<Var>,
    pub cross: Vec<Var>,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, seed };
        let (n, d_model, d) = (config.vocab_size, config.d_model, config.feature_dim);
        let src_embed = init.glorot("src_embed", &[n, config.word_dim()])?;
        let features = match (config.use_features, config.fusion) {
            (false, _) if d == 0 => FeatureTables::None,
            (false, _) => FeatureTables::ZeroPad(d),
            (true, FusionMode::SumThenConcat) => FeatureTables::Sum {
                pos: init.glorot("feat.pos", &[config.pos_vocab_size, d])?,
                case: init.glorot("feat.case", &[CASE_VOCAB, d])?,
                postag: init.glorot("feat.postag", &[POSTAG_VOCAB, d])?,
            },
            (true, FusionMode::ConcatAll { pos, case, postag }) => FeatureTables::Concat {
                pos: init.glorot("feat.pos", &[config.pos_vocab_size, pos])?,
                case: init.glorot("feat.case", &[CASE_VOCAB, case])?,
                postag: init.glorot("feat.postag", &[POSTAG_VOCAB, postag])?,
            },
        };
        let tgt_embed = init.glorot("tgt_embed", &[n, d_model])?;
        let encoder = EncoderStack::new(&mut init, "enc", config.layers, d_model, config.heads, config.ffn_width)?;
        let decoder = (0..config.layers)
            .map(|l| DecoderLayer::new(&mut init, &format!("dec.{l}"), d_model, config.heads, config.ffn_width))
            .collect::<Result<_>>()?;
        let output = Linear::new(&mut init, "out", d_model, n, true)?;
        Ok(TransformerModel {
            config,
            store,
            src_embed,
            features,
            tgt_embed,
            encoder,
            decoder,
            output,
        })
    }

    /// Zeroes every feature table and excludes it from optimization.
    pub fn zero_and_freeze_features(&mut self) {
        for id in self.features.param_ids() {
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

    fn positions(&self, lens_batch: usize, len: usize) -> Tensor {
        let pe = sinusoidal_positions(len, self.config.d_model);
        let mut data = Vec::with_capacity(lens_batch * pe.len());
        for _ in 0..lens_batch {
            data.extend_from_slice(pe.data());
        }
        Tensor::new(&[lens_batch * len, self.config.d_model], data).expect("tiled shape")
    }

    /// Fused source embeddings `[√D·E x ; f]` plus positions, one row per
    /// (padded) source position.
    pub fn embed_source(&self, g: &mut Graph, ctx: &mut Ctx, src: &SourceBatch) -> Result<Var> {
        let table = ctx.param(g, self.src_embed);
        let word = g.gather(table, &src.ids)?;
        let word = g.scale(word, (self.config.d_model as f64).sqrt());
        let column = |f: fn(&FeatureTriple) -> usize| src.features.iter().map(f).collect::<Vec<_>>();
        let fused = match self.features {
            FeatureTables::None => word,
            FeatureTables::ZeroPad(d) => {
                let zeros = g.constant(Tensor::zeros(&[src.ids.len(), d]));
                g.concat(&[word, zeros], 1)?
            }
            FeatureTables::Sum { pos, case, postag } => {
                let fp = ctx.param(g, pos);
                let fp = g.gather(fp, &column(|f| f.pos_id))?;
                let fc = ctx.param(g, case);
                let fc = g.gather(fc, &column(|f| f.case_id))?;
                let fs = ctx.param(g, postag);
                let fs = g.gather(fs, &column(|f| f.position_id))?;
                let sum = g.add(fp, fc)?;
                let sum = g.add(sum, fs)?;
                g.concat(&[word, sum], 1)?
            }
            FeatureTables::Concat { pos, case, postag } => {
                let fp = ctx.param(g, pos);
                let fp = g.gather(fp, &column(|f| f.pos_id))?;
                let fc = ctx.param(g, case);
                let fc = g.gather(fc, &column(|f| f.case_id))?;
                let fs = ctx.param(g, postag);
                let fs = g.gather(fs, &column(|f| f.position_id))?;
                g.concat(&[word, fp, fc, fs], 1)?
            }
        };
        let x = if self.config.positional_encoding {
            let pe = g.constant(self.positions(src.batch(), src.len));
            g.add(fused, pe)?
        } else {
            fused
        };
        ctx.dropout(g, x)
    }

    /// Full-width target embeddings with no features.
    pub fn embed_target(&self, g: &mut Graph, ctx: &mut Ctx, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
        let table = ctx.param(g, self.tgt_embed);
        let x = g.gather(table, ids)?;
        let x = g.scale(x, (self.config.d_model as f64).sqrt());
        let x = if self.config.positional_encoding {
            let pe = g.constant(self.positions(batch, len));
            g.add(x, pe)?
        } else {
            x
        };
        ctx.dropout(g, x)
    }

    pub fn encode(&self, g: &mut Graph, ctx: &mut Ctx, src: &SourceBatch, nodes: &mut AttentionNodes) -> Result<Var> {
        let x = self.embed_source(g, ctx, src)?;
        let (out, weights) = self.encoder.forward(g, ctx, x, &src.lens, src.len)?;
        nodes.encoder = weights;
        Ok(out)
    }

    /// Decoder logits (`batch·len × N`) for teacher-forced `input` ids.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        ctx: &mut Ctx,
        memory: Var,
        src: &SourceBatch,
        input: &[usize],
        tgt_lens: &[usize],
        tgt_len: usize,
        nodes: &mut AttentionNodes,
    ) -> Result<Var> {
        let batch = src.batch();
        let mut x = self.embed_target(g, ctx, input, batch, tgt_len)?;
        let self_layout = AttentionLayout {
            batch,
            q_len: tgt_len,
            k_len: tgt_len,
            key_lens: tgt_lens.to_vec(),
            causal: true,
        };
        let cross_layout = AttentionLayout {
            batch,
            q_len: tgt_len,
            k_len: src.len,
            key_lens: src.lens.clone(),
            causal: false,
        };
        nodes.decoder_self.clear();
        nodes.cross.clear();
        for layer in &self.decoder {
            let (y, sw, cw) = layer.forward(g, ctx, x, memory, &self_layout, &cross_layout)?;
            x = y;
            nodes.decoder_self.push(sw);
            nodes.cross.push(cw);
        }
        self.output.forward(g, ctx, x)
    }

    /// Label-smoothed teacher-forced loss, mean over target tokens.
    pub fn loss(&self, g: &mut Graph, ctx: &mut Ctx, src: &SourceBatch, tgt: &TargetBatch) -> Result<Var> {
        let mut nodes = AttentionNodes::default();
        let memory = self.encode(g, ctx, src, &mut nodes)?;
        let logits = self.decode(g, ctx, memory, src, &tgt.input, &tgt.lens, tgt.len, &mut nodes)?;
        g.cross_entropy(logits, &tgt.output, self.config.label_smoothing, PAD)
    }

    /// Mean gold-token negative log-likelihood with dropout off.
    pub fn nll(&self, examples: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        let mut rng = seeded_rng(0);
        for chunk in examples.chunks(32) {
            let (src, tgt) = batches(chunk)?;
            let mut g = Graph::inference();
            let mut ctx = self.ctx(false, &mut rng);
            let mut nodes = AttentionNodes::default();
            let memory = self.encode(&mut g, &mut ctx, &src, &mut nodes)?;
            let logits = self.decode(&mut g, &mut ctx, memory, &src, &tgt.input, &tgt.lens, tgt.len, &mut nodes)?;
            let l = g.cross_entropy(logits, &tgt.output, 0.0, PAD)?;
            total += g.value(l).item() * tgt.tokens() as f64;
            count += tgt.tokens();
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Greedy decoding of several sources at once. Records are captured for
    /// every sentence when `capture` is set.
    pub fn greedy_decode_batch(
        &self,
        sources: &[(&[usize], &[FeatureTriple])],
        max_len: usize,
        capture: bool,
    ) -> Result<Vec<Decoded>> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let src = SourceBatch::new(sources.iter().copied())?;
        let batch = src.batch();
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        if max_len == 0 {
            return Ok(outputs.into_iter().map(|ids| Decoded { ids, records: Vec::new() }).collect());
        }
        let mut rng = seeded_rng(0);
        let mut g = Graph::inference();
        let mut ctx = self.ctx(false, &mut rng);
        let mut nodes = AttentionNodes::default();
        let memory = self.encode(&mut g, &mut ctx, &src, &mut nodes)?;
        // every row keeps the same length; finished rows keep emitting and are ignored
        let mut inputs: Vec<Vec<usize>> = vec![vec![BOS]; batch];
        for step in 0..max_len {
            let t = step + 1;
            let flat: Vec<usize> = inputs.iter().flatten().copied().collect();
            let lens = vec![t; batch];
            let logits = self.decode(&mut g, &mut ctx, memory, &src, &flat, &lens, t, &mut nodes)?;
            let lv = g.value(logits);
            for b in 0..batch {
                let row = lv.row(b * t + t - 1);
                let next = argmax(row);
                if !done[b] {
                    outputs[b].push(next);
                    done[b] = next == EOS;
                }
                inputs[b].push(next);
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        let mut decoded = Vec::with_capacity(batch);
        for (b, mut ids) in outputs.into_iter().enumerate() {
            let records = if capture {
                self.records(&g, &nodes, b, ids.len(), src.lens[b])
            } else {
                Vec::new()
            };
            if ids.last() == Some(&EOS) {
                ids.pop();
            }
            decoded.push(Decoded { ids, records });
        }
        Ok(decoded)
    }

    /// BOS-seeded argmax decoding of one sentence until EOS or `max_len`.
    pub fn greedy_decode(&self, source: &[usize], features: &[FeatureTriple], max_len: usize) -> Result<Decoded> {
        let mut out = self.greedy_decode_batch(&[(source, features)], max_len, true)?;
        Ok(out.remove(0))
    }

    fn records(&self, g: &Graph, nodes: &AttentionNodes, b: usize, rows: usize, src_len: usize) -> Vec<AttentionRecord> {
        let mut out = Vec::new();
        let kinds = [
            (AttentionKind::EncoderSelf, &nodes.encoder, src_len, src_len),
            (AttentionKind::DecoderSelf, &nodes.decoder_self, rows, rows),
            (AttentionKind::Cross, &nodes.cross, rows, src_len),
        ];
        for (kind, vars, r, c) in kinds {
            for (layer, &v) in vars.iter().enumerate() {
                let Some((probs, heads, layout)) = g.attention_weights(v) else { continue };
                for head in 0..heads {
                    let base = (b * heads + head) * layout.q_len * layout.k_len;
                    let weights = (0..r.min(layout.q_len))
                        .map(|i| probs[base + i * layout.k_len..][..c.min(layout.k_len)].to_vec())
                        .collect();
                    out.push(AttentionRecord { layer, head, kind, weights });
                }
            }
        }
        out
    }
}

/// Output ids (EOS stripped) and the attention captured while producing them.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub ids: Vec<usize>,
    pub records: Vec<AttentionRecord>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn batches(examples: &[Example]) -> Result<(SourceBatch, TargetBatch)> {
    let src = SourceBatch::new(examples.iter().map(|e| (e.source.as_slice(), e.features.as_slice())))?;
    let tgt = TargetBatch::new(examples.iter().map(|e| e.target.as_slice()));
    Ok((src, tgt))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainerConfig {
    pub schedule: NoamSchedule,
    pub adam: AdamConfig,
    /// Batches whose gradients are summed before one optimizer update.
    pub accumulation: usize,
}

/// Optimizer state plus the gradient-accumulation counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub adam: AdamState,
    pub pending_batches: usize,
    pub pending_tokens: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Mean label-smoothed loss of this batch.
    pub loss: f64,
    pub tokens: usize,
    /// Whether this call applied an optimizer update.
    pub updated: bool,
}

impl Trainer {
    pub fn new(model: &TransformerModel, config: TrainerConfig, seed: u64) -> Self {
        Trainer {
            adam: AdamState::new(&model.store, config.adam),
            config,
            pending_batches: 0,
            pending_tokens: 0,
            rng: seeded_rng(seed ^ DROPOUT_STREAM),
        }
    }

    /// Forward and backward on one batch; every `accumulation`-th call
    /// averages the summed gradients over all accumulated target tokens and
    /// takes an Adam step.
    pub fn train_step(&mut self, model: &mut TransformerModel, batch: &[Example]) -> Result<StepOutcome> {
        let (src, tgt) = batches(batch)?;
        let tokens = tgt.tokens();
        let mut g = Graph::new();
        let loss = {
            let mut ctx = model.ctx(true, &mut self.rng);
            model.loss(&mut g, &mut ctx, &src, &tgt)?
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} at update {}", self.adam.step)));
        }
        let summed = g.scale(loss, tokens as f64);
        g.backward(summed)?.accumulate(&mut model.store);
        self.pending_batches += 1;
        self.pending_tokens += tokens;
        let updated = self.pending_batches >= self.config.accumulation.max(1);
        if updated {
            model.store.scale_grads(1.0 / self.pending_tokens.max(1) as f64);
            let lr = self.config.schedule.lr(self.adam.step + 1);
            adam_step(&mut model.store, &mut self.adam, lr);
            model.store.zero_grad();
            self.pending_batches = 0;
            self.pending_tokens = 0;
        }
        Ok(StepOutcome { loss: value, tokens, updated })
    }
}
