//! The four-way hate-speech taxonomy shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of classes every model predicts over.
pub const NUM_CLASSES: usize = 4;

/// A gold or predicted category.
///
/// The declaration order is the fixed class order used for model outputs,
/// argmax tie-breaking and confusion matrix rows/columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Racial,
    Religious,
    Gender,
    Nonhate,
}

/// One gold-labeled document, the unit exchanged between annotation export
/// and training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledExample {
    pub id: String,
    /// Text as collected.
    pub text: String,
    /// Normalized tokens of `text`.
    pub tokens: Vec<String>,
    pub label: Label,
}

impl Label {
    /// All labels in class order.
    pub const ALL: [Label; NUM_CLASSES] = [Label::Racial, Label::Religious, Label::Gender, Label::Nonhate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    /// The wire value, e.g. `"nonhate"`.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Racial => "racial",
            Label::Religious => "religious",
            Label::Gender => "gender",
            Label::Nonhate => "nonhate",
        }
    }

    /// The class order as wire strings, embedded in model files.
    pub fn class_order() -> Vec<String> {
        Label::ALL.iter().map(|l| l.as_str().to_string()).collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}; expected one of racial, religious, gender, nonhate")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "racial" => Ok(Label::Racial),
            "religious" => Ok(Label::Religious),
            "gender" => Ok(Label::Gender),
            "nonhate" => Ok(Label::Nonhate),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}
