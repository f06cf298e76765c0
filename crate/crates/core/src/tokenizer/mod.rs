//! Byte-pair-encoding segmentation shared between source and target text.

mod bpe;
mod vocab;

pub use bpe::{decode, MergeTable, Segmentation, END_OF_WORD};
pub use vocab::{Vocab, BOS, CLS, EOS, MASK, PAD, SEP, SPECIALS, UNK};
