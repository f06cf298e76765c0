use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::bleu::{bleu_report, BleuReport};
use super::config::RunConfig;
use super::data::{ParallelPair, Tokenizer};
use crate::annotate::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::model::{AttentionRecord, Example, ModelConfig, Trainer, TrainerConfig, TransformerModel};
use crate::tensor::{seeded_rng, AdamConfig, NoamSchedule};

const SHUFFLE_STREAM: u64 = 0x5f1f_7e11;
const DECODE_CHUNK: usize = 32;
/// Updates between training-set NLL checks when a target loss is set.
const NLL_CHECK_EVERY: usize = 10;

/// A trained translator with everything needed to decode raw sentences.
#[derive(Clone, Debug)]
pub struct Translator {
    pub tokenizer: Tokenizer,
    pub model: TransformerModel,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub text: String,
    pub source_subwords: Vec<String>,
    pub target_subwords: Vec<String>,
    pub records: Vec<AttentionRecord>,
}

impl Translator {
    pub fn translate(&self, sources: &[AnnotatedSentence], max_len: usize, capture: bool) -> Result<Vec<Translation>> {
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(DECODE_CHUNK) {
            let annotated: Vec<AnnotatedSentence> = chunk.iter().map(|s| self.tokenizer.annotate(s)).collect();
            let ids: Vec<Vec<usize>> = annotated.iter().map(|a| self.tokenizer.source_ids(a)).collect();
            let batch: Vec<(&[usize], &[_])> = ids
                .iter()
                .zip(&annotated)
                .map(|(i, a)| (i.as_slice(), a.features.as_slice()))
                .collect();
            for (decoded, a) in self.model.greedy_decode_batch(&batch, max_len, capture)?.into_iter().zip(annotated) {
                out.push(Translation {
                    text: self.tokenizer.detokenize(&decoded.ids),
                    source_subwords: a.subwords,
                    target_subwords: self.tokenizer.vocab.decode_ids(&decoded.ids),
                    records: decoded.records,
                });
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, pairs: &[ParallelPair], max_len: usize) -> Result<BleuReport> {
        let sources: Vec<AnnotatedSentence> = pairs.iter().map(|p| p.source.clone()).collect();
        let hyps: Vec<String> = self.translate(&sources, max_len, false)?.into_iter().map(|t| t.text).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
        bleu_report(&hyps, &refs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean label-smoothed loss over the batches of this update.
    pub train_loss: f64,
    pub eval_bleu: Option<f64>,
}

pub fn curve_csv(curve: &[CurvePoint], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nstep,train_loss,eval_bleu\n");
    for p in curve {
        let bleu = p.eval_bleu.map(|b| format!("{b:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.6},{bleu}", p.step, p.train_loss);
    }
    out
}

pub fn write_curve(path: &Path, curve: &[CurvePoint], seed: u64) -> Result<()> {
    std::fs::write(path, curve_csv(curve, seed)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub translator: Translator,
    pub curve: Vec<CurvePoint>,
    /// Updates actually taken (fewer than configured after an early stop).
    pub steps: usize,
    /// Training-set gold-token NLL at the end, dropout off.
    pub final_nll: f64,
}

/// Greedy packing of examples into batches of at most `budget` tokens,
/// counting each example at its longer side.
pub fn pack_batches(examples: &[Example], order: &[usize], budget: usize) -> Vec<Vec<Example>> {
    let mut batches = Vec::new();
    let mut current: Vec<Example> = Vec::new();
    let mut used = 0;
    for &i in order {
        let e = &examples[i];
        let cost = e.source.len().max(e.target.len() + 1);
        if !current.is_empty() && used + cost > budget {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        used += cost;
        current.push(e.clone());
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

pub fn trainer_config(cfg: &RunConfig, d_model: usize) -> TrainerConfig {
    TrainerConfig {
        schedule: NoamSchedule {
            d_model,
            warmup: cfg.warmup,
            factor: cfg.lr_factor,
        },
        adam: AdamConfig::default(),
        accumulation: cfg.accumulation,
    }
}

/// Trains a translator from scratch. `model` supplies the architecture;
/// its vocabulary sizes are taken from `tokenizer`. `on_point` sees every
/// curve point as it is produced.
pub fn train_translator(
    cfg: &RunConfig,
    tokenizer: Tokenizer,
    train: &[ParallelPair],
    eval: Option<&[ParallelPair]>,
    model: &ModelConfig,
    mut on_point: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus("no training pairs"));
    }
    let model_cfg = ModelConfig {
        vocab_size: tokenizer.vocab.len(),
        pos_vocab_size: tokenizer.tagset.len(),
        ..model.clone()
    };
    let mut translator = Translator {
        model: TransformerModel::new(model_cfg, cfg.seed)?,
        tokenizer,
        seed: cfg.seed,
    };
    let examples: Vec<Example> = train.iter().map(|p| translator.tokenizer.example(p)).collect();
    let mut trainer = Trainer::new(&translator.model, trainer_config(cfg, translator.model.config.d_model), cfg.seed);
    let mut shuffle = seeded_rng(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0;
    let mut pending = (0.0, 0usize);
    let mut final_nll = None;
    'outer: while step < cfg.steps {
        order.shuffle(&mut shuffle);
        for batch in pack_batches(&examples, &order, cfg.batch_tokens) {
            let outcome = trainer.train_step(&mut translator.model, &batch)?;
            pending.0 += outcome.loss;
            pending.1 += 1;
            if !outcome.updated {
                continue;
            }
            step += 1;
            let last = step == cfg.steps;
            let mut stop = false;
            if let Some(target) = cfg.target_loss {
                if step % NLL_CHECK_EVERY == 0 || last {
                    let nll = translator.model.nll(&examples)?;
                    if nll < target {
                        final_nll = Some(nll);
                        stop = true;
                    }
                }
            }
            let evaluate = eval.is_some() && (last || stop || (cfg.eval_every > 0 && step % cfg.eval_every == 0));
            let eval_bleu = match eval {
                Some(pairs) if evaluate => Some(translator.evaluate(pairs, cfg.max_decode_len)?.bleu),
                _ => None,
            };
            let point = CurvePoint {
                step,
                train_loss: pending.0 / pending.1 as f64,
                eval_bleu,
            };
            on_point(&point);
            curve.push(point);
            pending = (0.0, 0);
            if stop || last {
                break 'outer;
            }
        }
    }
    let final_nll = match final_nll {
        Some(n) => n,
        None => translator.model.nll(&examples)?,
    };
    Ok(TrainOutcome {
        translator,
        curve,
        steps: step,
        final_nll,
    })
}
