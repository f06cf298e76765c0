use rand::seq::SliceRandom;

use super::config::RunConfig;
use super::data::{label_set, LabeledPair, Tokenizer};
use crate::bert::{BertClassifier, BertConfig, BertTrainer};
use crate::error::{Error, Result};
use crate::tensor::seeded_rng;

const SHUFFLE_STREAM: u64 = 0x0c1a_55e5;

#[derive(Clone, Debug)]
pub struct Classifier {
    pub tokenizer: Tokenizer,
    pub model: BertClassifier,
    pub labels: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub probabilities: Vec<f64>,
}

impl Classifier {
    pub fn predict(&self, pairs: &[LabeledPair]) -> Result<Vec<Prediction>> {
        let max = self.model.config.max_positions;
        let inputs = pairs
            .iter()
            .map(|p| self.tokenizer.classifier_input(&p.a, p.b.as_ref(), max))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(32) {
            for probabilities in self.model.classify(chunk)? {
                let best = (0..probabilities.len())
                    .max_by(|&a, &b| probabilities[a].total_cmp(&probabilities[b]))
                    .unwrap_or(0);
                out.push(Prediction {
                    label: self.labels[best].clone(),
                    probabilities,
                });
            }
        }
        Ok(out)
    }

    /// Fraction of `pairs` whose predicted label matches the gold one.
    pub fn accuracy(&self, pairs: &[LabeledPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus("no examples to score"));
        }
        let preds = self.predict(pairs)?;
        let hits = preds.iter().zip(pairs).filter(|(p, g)| p.label == g.label).count();
        Ok(hits as f64 / pairs.len() as f64)
    }
}

/// Fine-tunes a freshly initialized classifier for `cfg.epochs` passes.
/// Returns the model and the mean loss of each epoch.
pub fn finetune_classifier(
    cfg: &RunConfig,
    tokenizer: Tokenizer,
    pairs: &[LabeledPair],
    bert: &BertConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let labels = label_set(pairs);
    let config = BertConfig {
        vocab_size: tokenizer.vocab.len(),
        pos_vocab_size: tokenizer.tagset.len(),
        num_classes: labels.len().max(2),
        ..bert.clone()
    };
    let model = BertClassifier::new(config, cfg.seed)?;
    let examples = tokenizer.labeled_inputs(pairs, &labels, model.config.max_positions)?;
    let mut classifier = Classifier {
        tokenizer,
        model,
        labels,
        seed: cfg.seed,
    };
    while classifier.labels.len() < classifier.model.config.num_classes {
        classifier.labels.push(format!("<unused{}>", classifier.labels.len()));
    }
    let mut trainer = BertTrainer::new(&classifier.model, cfg.bert_lr, cfg.seed);
    let mut rng = seeded_rng(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| examples[i].clone()).collect();
            total += trainer.finetune_step(&mut classifier.model, &batch)?;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    Ok((classifier, epoch_losses))
}
