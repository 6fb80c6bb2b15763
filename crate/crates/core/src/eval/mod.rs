//! Stratified splitting, classification metrics and model comparison.

mod metrics;
mod report;
mod split;

pub use metrics::{confusion_matrix, macro_f1, metrics, Averaging, ClassMetrics, ConfusionMatrix, Metrics};
pub use report::{
    compare, evaluate, Comparison, EvalReport, PublishedRow, PUBLISHED_REFERENCE, PUBLISHED_STATUS,
    REPORT_FORMAT_VERSION,
};
pub use split::{stratified_split, SplitIndices, SplitRatios};

use crate::label::Label;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{gold} gold labels but {pred} predictions")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("class {class} has {available} examples, too few to give the {split} split at least one")]
    ClassTooSmall {
        class: Label,
        split: &'static str,
        available: usize,
    },
    #[error("models {first} and {second} were trained on different vocabularies")]
    VocabMismatch { first: String, second: String },
}
