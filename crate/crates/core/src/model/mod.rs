//! Encoder–decoder Transformer with syntax-infused source embeddings.

pub mod attention;
mod config;
pub mod layers;
mod transformer;

pub use config::{FusionMode, ModelConfig, CASE_VOCAB, POSTAG_VOCAB};
pub use transformer::{
    batches, AttentionNodes, Decoded, Example, FeatureTables, SourceBatch, StepOutcome, TargetBatch, Trainer,
    TrainerConfig, TransformerModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    EncoderSelf,
    DecoderSelf,
    Cross,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::EncoderSelf => "self-enc",
            AttentionKind::DecoderSelf => "self-dec",
            AttentionKind::Cross => "cross",
        }
    }
}

/// Softmax weights of one head: one row per query (target step for
/// decoder-side kinds), one column per key.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub kind: AttentionKind,
    pub weights: Vec<Vec<f64>>,
}
