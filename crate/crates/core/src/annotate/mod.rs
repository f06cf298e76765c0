//! Per-subword syntactic features: POS broadcast from the word, a binary
//! case flag and the subword's position inside its word.

mod fallback;
mod tagset;

use std::fmt::Write as _;
use std::path::Path;

pub use fallback::fallback_pos;
pub use tagset::{PosTagSet, UNIVERSAL_TAGS, UNK_POS};

use crate::error::{Error, Result};
use crate::tokenizer::{MergeTable, Segmentation};

/// Location of a subword inside its word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PositionTag {
    Begin,
    Middle,
    End,
    /// The subword is the whole word.
    Only,
}

impl PositionTag {
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        match self {
            PositionTag::Begin => 0,
            PositionTag::Middle => 1,
            PositionTag::End => 2,
            PositionTag::Only => 3,
        }
    }

    pub fn from_id(id: usize) -> Option<Self> {
        [PositionTag::Begin, PositionTag::Middle, PositionTag::End, PositionTag::Only]
            .get(id)
            .copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PositionTag::Begin => "B",
            PositionTag::Middle => "M",
            PositionTag::End => "E",
            PositionTag::Only => "O",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureTriple {
    pub pos_id: usize,
    pub case_id: usize,
    pub position_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub surface: String,
    pub pos_id: usize,
}

/// A sentence with word-level tags and, once annotated, the aligned
/// subword/feature stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub words: Vec<Word>,
    /// Vocabulary symbols (end marker on word-final subwords).
    pub subwords: Vec<String>,
    pub features: Vec<FeatureTriple>,
    /// Index into `words` of the word each subword came from.
    pub word_of: Vec<usize>,
}

impl AnnotatedSentence {
    pub fn from_words(words: Vec<Word>) -> Self {
        AnnotatedSentence {
            words,
            ..Default::default()
        }
    }

    /// Tags plain whitespace-separated text with [`fallback_pos`].
    pub fn from_text(text: &str, tagset: &PosTagSet) -> Self {
        AnnotatedSentence::from_words(
            text.split_whitespace()
                .map(|w| Word {
                    surface: w.to_string(),
                    pos_id: tagset.id(fallback_pos(w)),
                })
                .collect(),
        )
    }

    /// Number of subwords.
    pub fn len(&self) -> usize {
        self.subwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subwords.is_empty()
    }

    pub fn text(&self) -> String {
        self.words
            .iter()
            .map(|w| w.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn propagate_pos(word_pos: usize, segmentation: &Segmentation) -> Vec<usize> {
    vec![word_pos; segmentation.len()]
}

/// 1 when the first character is an uppercase letter.
pub fn case_feature(word: &str) -> usize {
    word.chars().next().map_or(0, |c| c.is_uppercase() as usize)
}

pub fn subword_position_tags(segmentation: &Segmentation) -> Vec<PositionTag> {
    match segmentation.len() {
        0 => Vec::new(),
        1 => vec![PositionTag::Only],
        k => {
            let mut tags = vec![PositionTag::Middle; k];
            tags[0] = PositionTag::Begin;
            tags[k - 1] = PositionTag::End;
            tags
        }
    }
}

/// Segments every word and fills the subword-aligned feature stream.
pub fn annotate(sentence: &AnnotatedSentence, merges: &MergeTable) -> AnnotatedSentence {
    let mut out = AnnotatedSentence::from_words(sentence.words.clone());
    for (wi, word) in sentence.words.iter().enumerate() {
        let seg = merges.encode_word(&word.surface);
        let case_id = case_feature(&word.surface);
        let positions = subword_position_tags(&seg);
        let pos_ids = propagate_pos(word.pos_id, &seg);
        for ((sym, pos_id), tag) in seg.symbols().into_iter().zip(pos_ids).zip(positions) {
            out.subwords.push(sym);
            out.features.push(FeatureTriple {
                pos_id,
                case_id,
                position_id: tag.id(),
            });
            out.word_of.push(wi);
        }
    }
    out
}

/// Parses blocks of `surface<TAB>POS` lines separated by blank lines. A line
/// with only a surface form is tagged with [`fallback_pos`].
pub fn parse_annotated(text: &str, tagset: &PosTagSet, path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let mut sentences = Vec::new();
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !words.is_empty() {
                sentences.push(AnnotatedSentence::from_words(std::mem::take(&mut words)));
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (surface, pos) = match cols.as_slice() {
            [surface] => (*surface, fallback_pos(surface)),
            [surface, pos] => (*surface, *pos),
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected 2 tab-separated columns, found {}", cols.len()),
                })
            }
        };
        if surface.is_empty() || surface.contains(char::is_whitespace) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("invalid surface form {surface:?}"),
            });
        }
        words.push(Word {
            surface: surface.to_string(),
            pos_id: tagset.id(pos.trim()),
        });
    }
    if !words.is_empty() {
        sentences.push(AnnotatedSentence::from_words(words));
    }
    Ok(sentences)
}

pub fn read_annotated(path: &Path, tagset: &PosTagSet) -> Result<Vec<AnnotatedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotated(&text, tagset, path)
}

/// Word-level annotated-TSV rendering, the inverse of [`parse_annotated`].
pub fn format_annotated(sentences: &[AnnotatedSentence], tagset: &PosTagSet) -> String {
    let mut out = String::new();
    for s in sentences {
        for w in &s.words {
            let _ = writeln!(out, "{}\t{}", w.surface, tagset.tag(w.pos_id));
        }
        out.push('\n');
    }
    out
}

/// Subword-level rendering with columns `subword, pos, case, postag`.
pub fn format_features(sentences: &[AnnotatedSentence], tagset: &PosTagSet) -> String {
    let mut out = String::new();
    for s in sentences {
        for (sym, f) in s.subwords.iter().zip(&s.features) {
            let tag = PositionTag::from_id(f.position_id).map_or("?", PositionTag::as_str);
            let _ = writeln!(out, "{sym}\t{}\t{}\t{tag}", tagset.tag(f.pos_id), f.case_id);
        }
        out.push('\n');
    }
    out
}
