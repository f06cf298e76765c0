//! Parallel and labelled corpora on disk, the shared tokenizer bundle and
//! seeded subsampling.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::annotate::{annotate, fallback_pos, format_annotated, read_annotated, AnnotatedSentence, PosTagSet, Word};
use crate::bert::{build_input, BertInput, LabeledInput, Tagged};
use crate::error::{Error, Result};
use crate::model::Example;
use crate::tensor::seeded_rng;
use crate::tokenizer::{decode, MergeTable, Vocab};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelPair {
    /// Word-level annotated source.
    pub source: AnnotatedSentence,
    pub target: String,
}

pub fn source_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".src.tsv")
}

pub fn target_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".tgt.txt")
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads `<prefix>.src.tsv` and the line-aligned `<prefix>.tgt.txt`.
pub fn read_parallel(prefix: &Path, tagset: &PosTagSet) -> Result<Vec<ParallelPair>> {
    let sources = read_annotated(&source_path(prefix), tagset)?;
    let tgt_path = target_path(prefix);
    let targets: Vec<String> = read_text(&tgt_path)?.lines().map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ")).collect();
    if sources.len() != targets.len() {
        return Err(Error::Format {
            path: tgt_path,
            line: targets.len().min(sources.len()) + 1,
            msg: format!("{} source sentences but {} target lines", sources.len(), targets.len()),
        });
    }
    if let Some(i) = targets.iter().position(String::is_empty) {
        return Err(Error::Format {
            path: tgt_path,
            line: i + 1,
            msg: "empty target sentence".into(),
        });
    }
    if sources.is_empty() {
        return Err(Error::EmptyCorpus("parallel corpus has no sentences"));
    }
    Ok(sources
        .into_iter()
        .zip(targets)
        .map(|(source, target)| ParallelPair { source, target })
        .collect())
}

pub fn write_parallel(prefix: &Path, pairs: &[ParallelPair], tagset: &PosTagSet) -> Result<()> {
    let sources: Vec<AnnotatedSentence> = pairs.iter().map(|p| p.source.clone()).collect();
    write_text(&source_path(prefix), &format_annotated(&sources, tagset))?;
    let mut targets = String::new();
    for p in pairs {
        targets.push_str(&p.target);
        targets.push('\n');
    }
    write_text(&target_path(prefix), &targets)
}

/// A deterministic sample of `⌈fraction·n⌉` items in their original order.
/// Samples for smaller fractions under the same seed are subsets of those
/// for larger ones.
pub fn subsample<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<Vec<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("data fraction {fraction} outside (0, 1]")));
    }
    let take = ((fraction * items.len() as f64).ceil() as usize).min(items.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}

/// Merge table, shared vocabulary and POS inventory: everything needed to
/// turn raw sentences into model ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pub merges: MergeTable,
    pub vocab: Vocab,
    pub tagset: PosTagSet,
}

impl Tokenizer {
    /// Learns merges over both sides and builds the shared vocabulary.
    pub fn fit(pairs: &[ParallelPair], num_merges: usize, tagset: PosTagSet) -> Result<Self> {
        let mut text: Vec<String> = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            text.push(p.source.text());
            text.push(p.target.clone());
        }
        let merges = MergeTable::learn(&text, num_merges)?;
        Ok(Self::with_merges(merges, &text, tagset))
    }

    pub fn with_merges<S: AsRef<str>>(merges: MergeTable, sentences: &[S], tagset: PosTagSet) -> Self {
        let segmented: Vec<Vec<String>> = sentences.iter().map(|s| merges.sentence_symbols(s.as_ref())).collect();
        let vocab = Vocab::build(segmented.iter().map(Vec::as_slice));
        Tokenizer { merges, vocab, tagset }
    }

    /// Segments and annotates a word-level source sentence.
    pub fn annotate(&self, source: &AnnotatedSentence) -> AnnotatedSentence {
        annotate(source, &self.merges)
    }

    pub fn source_ids(&self, annotated: &AnnotatedSentence) -> Vec<usize> {
        self.vocab.encode(&annotated.subwords)
    }

    pub fn target_symbols(&self, sentence: &str) -> Vec<String> {
        self.merges.sentence_symbols(sentence)
    }

    pub fn example(&self, pair: &ParallelPair) -> Example {
        let annotated = self.annotate(&pair.source);
        Example {
            source: self.source_ids(&annotated),
            features: annotated.features,
            target: self.vocab.encode(&self.target_symbols(&pair.target)),
        }
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        decode(&self.vocab.decode_ids(ids))
    }
}

/// One line of a labelled-classification file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    pub label: String,
    pub a: AnnotatedSentence,
    pub b: Option<AnnotatedSentence>,
}

/// Reads `label<TAB>sentence_a<TAB>sentence_b?` lines. POS tags come from
/// `pos_path` when given: an annotated-TSV file holding one block per
/// sentence, `a` then `b`, in file order. Otherwise words are tagged with
/// [`fallback_pos`].
pub fn read_labeled(path: &Path, pos_path: Option<&Path>, tagset: &PosTagSet) -> Result<Vec<LabeledPair>> {
    let text = read_text(path)?;
    let mut blocks = match pos_path {
        Some(p) => Some(read_annotated(p, tagset)?.into_iter()),
        None => None,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&cols.len()) || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
            return Err(format_err(format!("expected label, sentence and optional second sentence; found {} columns", cols.len())));
        }
        let mut tag = |sentence: &str| -> Result<AnnotatedSentence> {
            let words: Vec<&str> = sentence.split_whitespace().collect();
            match blocks.as_mut() {
                None => Ok(AnnotatedSentence::from_words(
                    words
                        .iter()
                        .map(|w| Word {
                            surface: w.to_string(),
                            pos_id: tagset.id(fallback_pos(w)),
                        })
                        .collect(),
                )),
                Some(it) => {
                    let block = it.next().ok_or_else(|| format_err("POS file has fewer sentences than the data".into()))?;
                    let surfaces: Vec<&str> = block.words.iter().map(|w| w.surface.as_str()).collect();
                    if surfaces != words {
                        return Err(format_err(format!("POS block {:?} does not match sentence {sentence:?}", surfaces.join(" "))));
                    }
                    Ok(block)
                }
            }
        };
        let a = tag(cols[1])?;
        let b = match cols.get(2).filter(|s| !s.trim().is_empty()) {
            Some(s) => Some(tag(s)?),
            None => None,
        };
        out.push(LabeledPair {
            label: cols[0].trim().to_string(),
            a,
            b,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus("labelled file has no examples"));
    }
    Ok(out)
}

/// Sorted distinct labels; a label's index is its class id.
pub fn label_set(pairs: &[LabeledPair]) -> Vec<String> {
    let mut labels: Vec<String> = pairs.iter().map(|p| p.label.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}

impl Tokenizer {
    /// Segments both sentences and packs them for the classifier.
    pub fn classifier_input(&self, a: &AnnotatedSentence, b: Option<&AnnotatedSentence>, max_positions: usize) -> Result<BertInput> {
        let a = self.annotate(a);
        let ids_a = self.source_ids(&a);
        let pos_a: Vec<usize> = a.features.iter().map(|f| f.pos_id).collect();
        let b = b.map(|b| self.annotate(b));
        let ids_b = b.as_ref().map(|b| self.source_ids(b)).unwrap_or_default();
        let pos_b: Vec<usize> = b.as_ref().map(|b| b.features.iter().map(|f| f.pos_id).collect()).unwrap_or_default();
        build_input(
            Tagged { ids: &ids_a, pos_ids: &pos_a },
            b.as_ref().map(|_| Tagged { ids: &ids_b, pos_ids: &pos_b }),
            max_positions,
        )
    }

    pub fn labeled_inputs(&self, pairs: &[LabeledPair], labels: &[String], max_positions: usize) -> Result<Vec<LabeledInput>> {
        pairs
            .iter()
            .map(|p| {
                let label = labels
                    .iter()
                    .position(|l| *l == p.label)
                    .ok_or_else(|| Error::Invalid(format!("unknown label {:?}", p.label)))?;
                Ok(LabeledInput {
                    input: self.classifier_input(&p.a, p.b.as_ref(), max_positions)?,
                    label,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_is_nested_and_deterministic() {
        let items: Vec<usize> = (0..50).collect();
        let small = subsample(&items, 0.1, 7).unwrap();
        let large = subsample(&items, 0.5, 7).unwrap();
        assert_eq!(small.len(), 5);
        assert_eq!(large.len(), 25);
        assert!(small.iter().all(|x| large.contains(x)));
        assert_eq!(small, subsample(&items, 0.1, 7).unwrap());
        assert_eq!(subsample(&items, 1.0, 3).unwrap(), items);
        assert!(subsample(&items, 0.0, 3).is_err());
        assert_eq!(subsample(&items, 0.01, 3).unwrap().len(), 1);
    }

    #[test]
    fn parallel_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("toy");
        let tagset = PosTagSet::universal();
        let pairs = vec![ParallelPair {
            source: AnnotatedSentence::from_text("The cat runs", &tagset),
            target: "le chat court".into(),
        }];
        write_parallel(&prefix, &pairs, &tagset).unwrap();
        assert_eq!(read_parallel(&prefix, &tagset).unwrap(), pairs);
        std::fs::write(target_path(&prefix), "a\nb\n").unwrap();
        assert!(matches!(read_parallel(&prefix, &tagset), Err(Error::Format { .. })));
    }

    #[test]
    fn labeled_file_with_and_without_pos() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("cls.tsv");
        std::fs::write(&data, "pos\tgood film\nneg\tbad film\tvery bad\n").unwrap();
        let tagset = PosTagSet::universal();
        let plain = read_labeled(&data, None, &tagset).unwrap();
        assert_eq!(plain.len(), 2);
        assert!(plain[1].b.is_some());
        let pos = dir.path().join("cls.pos.tsv");
        std::fs::write(&pos, "good\tADJ\nfilm\tNOUN\n\nbad\tADJ\nfilm\tNOUN\n\nvery\tADV\nbad\tADJ\n").unwrap();
        let tagged = read_labeled(&data, Some(&pos), &tagset).unwrap();
        assert_eq!(tagged[0].a.words[0].pos_id, tagset.id("ADJ"));
        assert_eq!(label_set(&tagged), ["neg", "pos"]);
        std::fs::write(&data, "pos\n").unwrap();
        assert!(matches!(read_labeled(&data, None, &tagset), Err(Error::Format { line: 1, .. })));
    }
}
