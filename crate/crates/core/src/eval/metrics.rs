use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::label::{Label, NUM_CLASSES};

/// Rows are gold labels, columns predictions, both in class order.
pub type ConfusionMatrix = [[usize; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
    Weighted,
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
            Averaging::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn f1(&self, averaging: Averaging) -> f64 {
        match averaging {
            Averaging::Macro => self.macro_f1,
            Averaging::Micro => self.micro_f1,
            Averaging::Weighted => self.weighted_f1,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn confusion_matrix(gold: &[Label], pred: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (g, p) in gold.iter().zip(pred) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Per-class precision, recall and F1 plus their averages. Empty
/// denominators give 0.
pub fn metrics(gold: &[Label], pred: &[Label]) -> Result<Metrics, EvalError> {
    let confusion = confusion_matrix(gold, pred)?;
    let total = gold.len();
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    let mut correct = 0;
    for label in Label::ALL {
        let c = label.index();
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        correct += tp;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.push(ClassMetrics {
            label,
            precision,
            recall,
            f1: harmonic(precision, recall),
            support,
        });
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_CLASSES as f64;
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64
    };
    // single-label multiclass: micro precision = micro recall = accuracy
    let accuracy = ratio(correct, total);
    Ok(Metrics {
        per_class,
        macro_f1,
        micro_f1: accuracy,
        weighted_f1,
        accuracy,
        confusion,
    })
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(gold: &[Label], pred: &[Label]) -> Result<f64, EvalError> {
    Ok(metrics(gold, pred)?.macro_f1)
}
