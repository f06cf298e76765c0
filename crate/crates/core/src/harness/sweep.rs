use std::fmt::Write as _;

use super::config::RunConfig;
use super::data::{subsample, ParallelPair, Tokenizer};
use super::train::train_translator;
use crate::error::Result;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub pairs: usize,
    pub baseline_bleu: f64,
    pub syntax_bleu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Tab-separated table, BLEU in `[0, 1]` and in points.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# seed={}\nfraction\tpairs\tbaseline_bleu\tsyntax_bleu\tbaseline_x100\tsyntax_x100\n", self.seed);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.2}\t{:.2}",
                r.fraction,
                r.pairs,
                r.baseline_bleu,
                r.syntax_bleu,
                100.0 * r.baseline_bleu,
                100.0 * r.syntax_bleu
            );
        }
        out
    }
}

/// Trains the baseline (`d = 0`, all `D` columns for words) and the
/// syntax-infused model on the same seeded sample for every fraction, and
/// scores both on `eval`. The tokenizer is shared by every run.
pub fn sweep(
    cfg: &RunConfig,
    tokenizer: &Tokenizer,
    train: &[ParallelPair],
    eval: &[ParallelPair],
    syntax: &ModelConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(cfg.fractions.len());
    for &fraction in &cfg.fractions {
        let sample = subsample(train, fraction, cfg.seed)?;
        let run = |model: &ModelConfig| -> Result<f64> {
            let out = train_translator(cfg, tokenizer.clone(), &sample, None, model, |_| {})?;
            Ok(out.translator.evaluate(eval, cfg.max_decode_len)?.bleu)
        };
        let row = SweepRow {
            fraction,
            pairs: sample.len(),
            baseline_bleu: run(&syntax.baseline())?,
            syntax_bleu: run(syntax)?,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(SweepTable { seed: cfg.seed, rows })
}
