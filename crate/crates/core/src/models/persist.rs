//! Model files are single JSON documents:
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "model_type": "rule" | "linear" | "sbilstm",
//!   "class_order": ["racial", "religious", "gender", "nonhate"],
//!   "vocab_hash": "<sha-256 hex>" | null,
//!   "parameters": { ... }
//! }
//! ```
//!
//! `parameters` depends on the model type:
//! - rule: `precedence`, `entries` (`surface_form`, `label`, `weight`)
//! - linear: `vocab`, `config`, `n_features`, `weights` (row-major, class
//!   by feature), `bias`
//! - sbilstm: `vocab`, `config`, `params` (flat vector: embeddings, then per
//!   layer the forward and backward cells as `W`, `U`, `b` with gates
//!   input/forget/cell/output, then dense weights and bias, then output
//!   weights and bias)
//!
//! Floats are written with round-trip precision, so a reloaded model
//! predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::linear::{LinearClassifier, LinearConfig};
use super::lstm::SbiLstmConfig;
use super::rule::RuleEntry;
use super::{Classifier, LinearModel, ModelError, ModelKind, RuleModel, SbiLstmModel};
use crate::features::Vocabulary;
use crate::jsonl::write_atomic;
use crate::label::{Label, NUM_CLASSES};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    model_type: ModelKind,
    class_order: Vec<String>,
    vocab_hash: Option<String>,
    parameters: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleParams {
    precedence: Vec<Label>,
    entries: Vec<RuleEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    vocab: Vocabulary,
    config: LinearConfig,
    n_features: usize,
    weights: Vec<f64>,
    bias: [f64; NUM_CLASSES],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SbiLstmParams {
    vocab: Vocabulary,
    config: SbiLstmConfig,
    params: Vec<f64>,
}

fn format_err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Format(e.to_string())
}

pub fn model_to_string(model: &Classifier) -> Result<String, ModelError> {
    let parameters = match model {
        Classifier::Rule(m) => serde_json::to_value(RuleParams {
            precedence: m.precedence().to_vec(),
            entries: m.entries().to_vec(),
        }),
        Classifier::Linear(m) => {
            let c = m.classifier();
            serde_json::to_value(LinearParams {
                vocab: m.vocab().clone(),
                config: m.config().clone(),
                n_features: c.n_features,
                weights: c.weights.clone(),
                bias: c.bias,
            })
        }
        Classifier::Sbilstm(m) => serde_json::to_value(SbiLstmParams {
            vocab: m.vocab().clone(),
            config: m.config().clone(),
            params: m.params().to_vec(),
        }),
    }
    .map_err(format_err)?;
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        model_type: model.kind(),
        class_order: Label::class_order(),
        vocab_hash: model.vocab_hash(),
        parameters,
    };
    let mut text = serde_json::to_string(&file).map_err(format_err)?;
    text.push('\n');
    Ok(text)
}

pub fn model_from_str(text: &str) -> Result<Classifier, ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(format_err)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(ModelError::Format(format!(
            "schema version {} is not supported (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    if file.class_order != Label::class_order() {
        return Err(ModelError::Format(format!(
            "class order {:?} differs from {:?}",
            file.class_order,
            Label::class_order()
        )));
    }
    let model = match file.model_type {
        ModelKind::Rule => {
            let p: RuleParams = serde_json::from_value(file.parameters).map_err(format_err)?;
            Classifier::Rule(RuleModel::from_normalized(p.entries, p.precedence)?)
        }
        ModelKind::Linear => {
            let p: LinearParams = serde_json::from_value(file.parameters).map_err(format_err)?;
            let classifier = LinearClassifier {
                n_features: p.n_features,
                weights: p.weights,
                bias: p.bias,
            };
            Classifier::Linear(LinearModel::new(p.vocab, classifier, p.config)?)
        }
        ModelKind::Sbilstm => {
            let p: SbiLstmParams = serde_json::from_value(file.parameters).map_err(format_err)?;
            Classifier::Sbilstm(SbiLstmModel::from_parts(p.vocab, p.config, p.params)?)
        }
    };
    if model.vocab_hash() != file.vocab_hash {
        return Err(ModelError::Format(format!(
            "declared vocabulary hash {:?} does not match the embedded vocabulary {:?}",
            file.vocab_hash,
            model.vocab_hash()
        )));
    }
    Ok(model)
}

/// Writes atomically: readers never observe a partial file.
pub fn save_model(model: &Classifier, path: &Path) -> Result<(), ModelError> {
    let text = model_to_string(model)?;
    write_atomic(path, text.as_bytes()).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_model(path: &Path) -> Result<Classifier, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    model_from_str(&text)
}

/// Loads a model and refuses it unless its vocabulary hash equals
/// `expected` (models without a vocabulary always pass).
pub fn load_model_expecting(path: &Path, expected: &str) -> Result<Classifier, ModelError> {
    let model = load_model(path)?;
    match model.vocab_hash() {
        Some(h) if h != expected => Err(ModelError::Format(format!(
            "model was trained on vocabulary {h}, expected {expected}"
        ))),
        _ => Ok(model),
    }
}
