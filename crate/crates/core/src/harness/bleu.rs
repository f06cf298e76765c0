//! Corpus BLEU-4 over whitespace tokens, case-sensitive, reported in `[0, 1]`.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and candidate n-gram totals for orders 1..=4,
/// plus hypothesis and reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

impl NgramStats {
    pub fn sentence(hypothesis: &str, reference: &str) -> Self {
        let hyp: Vec<&str> = hypothesis.split_whitespace().collect();
        let refr: Vec<&str> = reference.split_whitespace().collect();
        let mut stats = NgramStats {
            hyp_len: hyp.len(),
            ref_len: refr.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(&hyp, n);
            let r = ngram_counts(&refr, n);
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            stats.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        }
        stats
    }

    pub fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Modified precision per order; `None` where the hypotheses hold no
    /// n-grams of that order.
    pub fn precisions(&self) -> [Option<f64>; MAX_ORDER] {
        std::array::from_fn(|n| (self.totals[n] > 0).then(|| self.matches[n] as f64 / self.totals[n] as f64))
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Geometric mean of the defined precisions times the brevity penalty.
    /// Any zero precision makes the score 0.
    pub fn score(&self) -> f64 {
        let defined: Vec<f64> = self.precisions().into_iter().flatten().collect();
        if defined.is_empty() || defined.contains(&0.0) {
            return 0.0;
        }
        let log_mean = defined.iter().map(|p| p.ln()).sum::<f64>() / defined.len() as f64;
        self.brevity_penalty() * log_mean.exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub bleu: f64,
    pub corpus: NgramStats,
    pub sentences: Vec<NgramStats>,
}

pub fn bleu_report<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus("no sentences to score"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let sentences: Vec<NgramStats> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| NgramStats::sentence(h.as_ref(), r.as_ref()))
        .collect();
    let mut corpus = NgramStats::default();
    for s in &sentences {
        corpus.add(s);
    }
    Ok(BleuReport {
        bleu: corpus.score(),
        corpus,
        sentences,
    })
}

pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    Ok(bleu_report(hypotheses, references)?.bleu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_corpus_scores_one() {
        let s = ["the cat sat on the mat", "a b c d e"];
        assert_eq!(bleu(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn clipped_unigrams_and_missing_bigrams() {
        let stats = NgramStats::sentence("the the the", "the cat");
        assert_eq!(stats.matches[0], 1);
        assert_eq!(stats.totals[0], 3);
        assert_eq!(stats.matches[1], 0);
        assert_eq!(bleu(&["the the the"], &["the cat"]).unwrap(), 0.0);
    }

    #[test]
    fn short_sentences_skip_undefined_orders() {
        assert_eq!(bleu(&["a b"], &["a b"]).unwrap(), 1.0);
        let b = bleu(&["a"], &["a b"]).unwrap();
        assert!((b - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_and_mismatched_inputs_fail() {
        assert!(matches!(bleu::<&str, &str>(&[], &[]), Err(Error::EmptyCorpus(_))));
        assert!(bleu(&["a"], &["a", "b"]).is_err());
        assert_eq!(bleu(&[""], &["a"]).unwrap(), 0.0);
    }
}
