//! Syntax-infused Transformer and BERT-style encoder built on a small
//! reverse-mode autodiff core.

pub mod annotate;
pub mod bert;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod model;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
