use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelError, Prediction};
use crate::label::{Label, NUM_CLASSES};
use crate::textnorm::{self, CleanDocument, Normalizer};

/// One weighted term. `surface_form` is stored normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleEntry {
    pub surface_form: String,
    pub label: Label,
    pub weight: f64,
}

/// Keyword-scoring baseline.
///
/// Each hate category scores the summed weights of its matched tokens (every
/// occurrence counts). All-zero scores mean `nonhate`; ties go to the
/// earliest category in `precedence`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleModel {
    entries: Vec<RuleEntry>,
    precedence: Vec<Label>,
    index: HashMap<String, Vec<(Label, f64)>>,
}

impl RuleModel {
    pub const DEFAULT_PRECEDENCE: [Label; 3] = [Label::Racial, Label::Religious, Label::Gender];

    pub fn new(entries: Vec<RuleEntry>, precedence: Vec<Label>, normalizer: &Normalizer) -> Result<Self, ModelError> {
        let mut normalized = Vec::with_capacity(entries.len());
        for entry in entries {
            let tokens = textnorm::tokenize(&normalizer.normalize(&entry.surface_form));
            let [form] = tokens.as_slice() else {
                return Err(ModelError::Config(format!(
                    "{:?} must normalize to exactly one token",
                    entry.surface_form
                )));
            };
            normalized.push(RuleEntry {
                surface_form: form.clone(),
                ..entry
            });
        }
        RuleModel::from_normalized(normalized, precedence)
    }

    /// Builds from entries whose surface forms are already normalized.
    pub(crate) fn from_normalized(entries: Vec<RuleEntry>, precedence: Vec<Label>) -> Result<Self, ModelError> {
        let mut sorted = precedence.clone();
        sorted.sort();
        if sorted != Self::DEFAULT_PRECEDENCE {
            return Err(ModelError::Config(
                "precedence must list racial, religious and gender exactly once".into(),
            ));
        }
        let mut index: HashMap<String, Vec<(Label, f64)>> = HashMap::new();
        for entry in &entries {
            if entry.label == Label::Nonhate {
                return Err(ModelError::Config(format!(
                    "{:?}: rule terms cannot target nonhate",
                    entry.surface_form
                )));
            }
            if !(entry.weight.is_finite() && entry.weight > 0.0) {
                return Err(ModelError::Config(format!(
                    "{:?}: weight must be finite and positive",
                    entry.surface_form
                )));
            }
            if entry.surface_form.is_empty() || entry.surface_form.contains(char::is_whitespace) {
                return Err(ModelError::Config(format!(
                    "{:?} is not a single token",
                    entry.surface_form
                )));
            }
            index
                .entry(entry.surface_form.clone())
                .or_default()
                .push((entry.label, entry.weight));
        }
        Ok(RuleModel {
            entries,
            precedence,
            index,
        })
    }

    /// Parses `surface_form<TAB>label<TAB>weight` records (weight optional,
    /// default 1). Blank and `#` lines are skipped.
    pub fn from_tsv(text: &str, precedence: Vec<Label>, normalizer: &Normalizer) -> Result<Self, ModelError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| ModelError::Config(format!("rule lexicon line {}: {m}", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let (surface, label, weight) = match fields.as_slice() {
                [s, l] => (*s, *l, 1.0),
                [s, l, w] => (*s, *l, w.trim().parse::<f64>().map_err(|_| bad("bad weight"))?),
                _ => return Err(bad("expected surface_form<TAB>label[<TAB>weight]")),
            };
            let label = label.trim().parse::<Label>().map_err(|e| bad(&e.to_string()))?;
            entries.push(RuleEntry {
                surface_form: surface.to_string(),
                label,
                weight,
            });
        }
        RuleModel::new(entries, precedence, normalizer)
    }

    pub fn entries(&self) -> &[RuleEntry] {
        &self.entries
    }

    pub fn precedence(&self) -> &[Label] {
        &self.precedence
    }

    /// Summed weights per class (nonhate always 0).
    pub fn scores<S: AsRef<str>>(&self, tokens: &[S]) -> [f64; NUM_CLASSES] {
        let mut scores = [0.0; NUM_CLASSES];
        for t in tokens {
            if let Some(hits) = self.index.get(t.as_ref()) {
                for &(label, w) in hits {
                    scores[label.index()] += w;
                }
            }
        }
        scores
    }

    pub fn classify_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        let scores = self.scores(tokens);
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            let mut distribution = [0.0; NUM_CLASSES];
            distribution[Label::Nonhate.index()] = 1.0;
            return Prediction {
                label: Label::Nonhate,
                distribution,
            };
        }
        let mut label = self.precedence[0];
        for &candidate in &self.precedence[1..] {
            if scores[candidate.index()] > scores[label.index()] {
                label = candidate;
            }
        }
        Prediction {
            label,
            distribution: scores.map(|s| s / total),
        }
    }
}

/// Scores `doc` against the rule lexicon.
pub fn rule_classify(doc: &CleanDocument, model: &RuleModel) -> Prediction {
    model.classify_tokens(&doc.tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(precedence: Vec<Label>) -> RuleModel {
        let tsv = "ዘር\tracial\t1\nሀይማኖት\treligious\t1.5\nሴት\tgender\n# comment\nጎሳ\tracial\t0.5\n";
        RuleModel::from_tsv(tsv, precedence, &Normalizer::default()).unwrap()
    }

    fn doc(text: &str) -> CleanDocument {
        CleanDocument::new("d", text)
    }

    #[test]
    fn examples() {
        let m = model(RuleModel::DEFAULT_PRECEDENCE.to_vec());
        assert_eq!(rule_classify(&doc("ስለ ሀይማኖት ብቻ"), &m).label, Label::Religious);
        let none = rule_classify(&doc("ሰላም ነው"), &m);
        assert_eq!(none.label, Label::Nonhate);
        assert_eq!(none.distribution, [0.0, 0.0, 0.0, 1.0]);
        // racial 1 vs gender 1
        let tie = rule_classify(&doc("ዘር ሴት"), &m);
        assert_eq!(tie.label, Label::Racial);
        assert_eq!(tie.distribution, [0.5, 0.0, 0.5, 0.0]);

        let reordered = model(vec![Label::Gender, Label::Racial, Label::Religious]);
        assert_eq!(rule_classify(&doc("ዘር ሴት"), &reordered).label, Label::Gender);
    }

    #[test]
    fn weights_accumulate_per_occurrence_and_normalize_spelling() {
        let m = model(RuleModel::DEFAULT_PRECEDENCE.to_vec());
        // two racial hits (1 + 0.5 + 0.5) beat one religious (1.5)
        let p = rule_classify(&doc("ጎሳ ሐይማኖት ጎሳ ዘር"), &m);
        assert_eq!(p.label, Label::Racial);
        assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let n = Normalizer::default();
        let prec = RuleModel::DEFAULT_PRECEDENCE.to_vec();
        assert!(RuleModel::from_tsv("ዘር\tnonhate\n", prec.clone(), &n).is_err());
        assert!(RuleModel::from_tsv("ዘር\tracial\t0\n", prec.clone(), &n).is_err());
        assert!(RuleModel::from_tsv("ዘር\tracial\tNaN\n", prec.clone(), &n).is_err());
        assert!(RuleModel::from_tsv("ዘር ሰው\tracial\n", prec.clone(), &n).is_err());
        assert!(RuleModel::from_tsv("ዘር\tracial\n", vec![Label::Racial], &n).is_err());
    }
}
