//! The three classifier families: keyword rules, multinomial logistic
//! regression over TF-IDF, and a stacked bidirectional LSTM.

mod linear;
mod lstm;
mod persist;
mod rule;

use serde::{Deserialize, Serialize};

pub use linear::{linear_loss_and_gradient, train_linear, LinearClassifier, LinearConfig, LinearModel, LinearTrained};
pub use lstm::{train_sbilstm, EpochLog, SbiLstmConfig, SbiLstmModel, SbiLstmTrained, Validation};
pub use persist::{load_model, load_model_expecting, model_from_str, model_to_string, save_model, SCHEMA_VERSION};
pub use rule::{rule_classify, RuleEntry, RuleModel};

use crate::features::FeatureError;
use crate::label::{Label, NUM_CLASSES};
use crate::textnorm::CleanDocument;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("model file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// A class decision with its probability distribution in class order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub distribution: [f64; NUM_CLASSES],
}

impl Prediction {
    /// Label is the argmax of `distribution`, ties to the earliest class.
    pub fn from_distribution(distribution: [f64; NUM_CLASSES]) -> Self {
        Prediction {
            label: Label::ALL[argmax(&distribution)],
            distribution,
        }
    }
}

/// Index of the largest entry; the first wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rule,
    Linear,
    Sbilstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rule, ModelKind::Linear, ModelKind::Sbilstm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rule => "rule",
            ModelKind::Linear => "linear",
            ModelKind::Sbilstm => "sbilstm",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model type {s:?}"))
    }
}

/// Any trained model. Immutable once built, so it can be shared across
/// threads for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Rule(RuleModel),
    Linear(LinearModel),
    Sbilstm(SbiLstmModel),
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::Rule(_) => ModelKind::Rule,
            Classifier::Linear(_) => ModelKind::Linear,
            Classifier::Sbilstm(_) => ModelKind::Sbilstm,
        }
    }

    pub fn predict(&self, doc: &CleanDocument) -> Prediction {
        match self {
            Classifier::Rule(m) => rule_classify(doc, m),
            Classifier::Linear(m) => m.predict(doc),
            Classifier::Sbilstm(m) => m.predict(doc),
        }
    }

    pub fn predict_batch(&self, docs: &[CleanDocument]) -> Vec<Prediction> {
        docs.iter().map(|d| self.predict(d)).collect()
    }

    /// Fingerprint of the vocabulary the model featurizes with; `None` for
    /// models that read tokens directly.
    pub fn vocab_hash(&self) -> Option<String> {
        match self {
            Classifier::Rule(_) => None,
            Classifier::Linear(m) => Some(m.vocab().fingerprint()),
            Classifier::Sbilstm(m) => Some(m.vocab().fingerprint()),
        }
    }
}
