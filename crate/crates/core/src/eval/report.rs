use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{metrics, Averaging, EvalError, Metrics};
use crate::label::Label;
use crate::models::Classifier;
use crate::textnorm::CleanDocument;

pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const PUBLISHED_STATUS: &str = "published, not reproduced";

/// Reference F1 scores from the original study, kept verbatim for
/// comparison. The averaging behind them was never stated.
pub const PUBLISHED_REFERENCE: [(&str, f64); 3] = [("sbilstm", 94.8), ("linear", 80.3), ("rule", 40.1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub model: String,
    pub split_fingerprint: String,
    pub seed: u64,
    pub averaging: Averaging,
    pub test_size: usize,
    pub metrics: Metrics,
}

impl EvalReport {
    pub fn headline_f1(&self) -> f64 {
        self.metrics.f1(self.averaging)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned per-class table and confusion matrix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.metrics;
        let _ = writeln!(out, "report format v{}", self.format_version);
        let _ = writeln!(out, "model: {}", self.model);
        let _ = writeln!(out, "split: {} (seed {})", self.split_fingerprint, self.seed);
        let _ = writeln!(out, "test size: {}", self.test_size);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &m.per_class {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "accuracy     {:.4}", m.accuracy);
        let _ = writeln!(out, "macro-F1     {:.4}", m.macro_f1);
        let _ = writeln!(out, "micro-F1     {:.4}", m.micro_f1);
        let _ = writeln!(out, "weighted-F1  {:.4}", m.weighted_f1);
        let _ = writeln!(out);
        let _ = write!(out, "{:<10}", "gold\\pred");
        for l in Label::ALL {
            let _ = write!(out, " {:>9}", l.as_str());
        }
        let _ = writeln!(out);
        for (l, row) in Label::ALL.iter().zip(&m.confusion) {
            let _ = write!(out, "{:<10}", l.as_str());
            for v in row {
                let _ = write!(out, " {v:>9}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

pub fn evaluate(
    name: &str,
    model: &Classifier,
    docs: &[CleanDocument],
    gold: &[Label],
    split_fingerprint: &str,
    seed: u64,
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    let pred: Vec<Label> = model.predict_batch(docs).iter().map(|p| p.label).collect();
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        model: name.to_string(),
        split_fingerprint: split_fingerprint.to_string(),
        seed,
        averaging,
        test_size: gold.len(),
        metrics: metrics(gold, &pred)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub model: String,
    /// Percent.
    pub f1: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub format_version: u32,
    pub split_fingerprint: String,
    pub seed: u64,
    pub averaging: Averaging,
    pub reports: Vec<EvalReport>,
    pub published: Vec<PublishedRow>,
    pub published_note: String,
}

impl Comparison {
    pub fn f1_of(&self, model: &str) -> Option<f64> {
        self.reports
            .iter()
            .find(|r| r.model == model)
            .map(EvalReport::headline_f1)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "comparison format v{}", self.format_version);
        let _ = writeln!(out, "split: {} (seed {})", self.split_fingerprint, self.seed);
        let _ = writeln!(out);
        let f1_header = format!("{}-F1", self.averaging.as_str());
        let _ = writeln!(out, "{:<10} {:>11} {:>9}  source", "model", f1_header, "accuracy");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<10} {:>11.2} {:>9.2}  this run",
                r.model,
                100.0 * r.headline_f1(),
                100.0 * r.metrics.accuracy
            );
        }
        for p in &self.published {
            let _ = writeln!(out, "{:<10} {:>11.1} {:>9}  {}", p.model, p.f1, "-", p.status);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{}", self.published_note);
        out
    }
}

/// Evaluates every model on the same test set. Models that featurize with
/// a vocabulary must all share it.
pub fn compare(
    models: &[(&str, &Classifier)],
    docs: &[CleanDocument],
    gold: &[Label],
    split_fingerprint: &str,
    seed: u64,
    averaging: Averaging,
) -> Result<Comparison, EvalError> {
    let mut vocab: Option<(String, String)> = None;
    for (name, model) in models {
        if let Some(hash) = model.vocab_hash() {
            match &vocab {
                Some((first, h)) if *h != hash => {
                    return Err(EvalError::VocabMismatch {
                        first: first.clone(),
                        second: name.to_string(),
                    })
                }
                Some(_) => {}
                None => vocab = Some((name.to_string(), hash)),
            }
        }
    }
    let reports = models
        .iter()
        .map(|(name, m)| evaluate(name, m, docs, gold, split_fingerprint, seed, averaging))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Comparison {
        format_version: REPORT_FORMAT_VERSION,
        split_fingerprint: split_fingerprint.to_string(),
        seed,
        averaging,
        reports,
        published: PUBLISHED_REFERENCE
            .iter()
            .map(|(m, f1)| PublishedRow {
                model: m.to_string(),
                f1: *f1,
                status: PUBLISHED_STATUS.to_string(),
            })
            .collect(),
        published_note: "Published rows come from the original study on its own unreleased corpus; \
                         its F1 averaging was not stated, so they are not comparable to this run."
            .to_string(),
    })
}
