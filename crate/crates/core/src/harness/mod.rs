//! Data handling, training orchestration, evaluation and export.

pub mod bleu;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod data;
pub mod heatmap;
pub mod sweep;
pub mod synthetic;
pub mod train;

pub use bleu::{bleu, bleu_report, BleuReport, NgramStats};
pub use classifier::{finetune_classifier, Classifier, Prediction};
pub use config::RunConfig;
pub use data::{read_labeled, read_parallel, subsample, write_parallel, LabeledPair, ParallelPair, Tokenizer};
pub use sweep::{sweep, SweepRow, SweepTable};
pub use train::{train_translator, CurvePoint, TrainOutcome, Translation, Translator};
