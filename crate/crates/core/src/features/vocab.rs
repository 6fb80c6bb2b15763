use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::FeatureError;
use crate::textnorm::CleanDocument;

/// Index reserved for padding.
pub const PAD: usize = 0;
/// Index of every out-of-vocabulary token.
pub const UNK: usize = 1;

pub const DEFAULT_MIN_DF: usize = 2;

const SPECIALS: usize = 2;

/// Token to index mapping built from the training split.
///
/// Real tokens occupy indices `2..len()` ordered by descending document
/// frequency, then by token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<usize>,
    index: HashMap<String, usize>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyRepr {
    n_docs: usize,
    tokens: Vec<(String, usize)>,
}

/// Builds a vocabulary of tokens appearing in at least `min_df` documents.
pub fn build_vocab(docs: &[CleanDocument], min_df: usize) -> Result<Vocabulary, FeatureError> {
    build_vocab_from_tokens(docs.iter().map(|d| d.tokens.as_slice()), min_df)
}

pub(crate) fn build_vocab_from_tokens<'a, I>(docs: I, min_df: usize) -> Result<Vocabulary, FeatureError>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut n_docs = 0;
    for tokens in docs {
        n_docs += 1;
        let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    if n_docs == 0 {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut entries: Vec<(&str, usize)> = df.into_iter().filter(|&(_, n)| n >= min_df.max(1)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_entries(
        n_docs,
        entries.into_iter().map(|(t, n)| (t.to_string(), n)),
    ))
}

impl Vocabulary {
    fn from_entries(n_docs: usize, entries: impl IntoIterator<Item = (String, usize)>) -> Self {
        let (tokens, df): (Vec<String>, Vec<usize>) = entries.into_iter().unzip();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + SPECIALS))
            .collect();
        Vocabulary {
            tokens,
            df,
            index,
            n_docs,
        }
    }

    /// Total number of indices, specials included.
    pub fn len(&self) -> usize {
        self.tokens.len() + SPECIALS
    }

    /// Number of real tokens.
    pub fn num_terms(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of training documents the frequencies were counted over.
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or [`UNK`].
    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    /// Token at `index`, `None` for the specials and out-of-range indices.
    pub fn token(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(SPECIALS)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn df(&self, token: &str) -> Option<usize> {
        self.get(token).map(|i| self.df[i - SPECIALS])
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1` of the
    /// real token at `index`.
    pub fn idf_at(&self, index: usize) -> f64 {
        let df = self.df[index - SPECIALS] as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    /// Real tokens in index order.
    pub fn tokens(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().enumerate().map(|(i, t)| (i + SPECIALS, t.as_str()))
    }

    /// Hex SHA-256 over the canonical serialization. Models record it so they
    /// refuse to run against a different vocabulary.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VocabularyRepr {
            n_docs: self.n_docs,
            tokens: self.tokens.iter().cloned().zip(self.df.iter().copied()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = VocabularyRepr::deserialize(deserializer)?;
        let mut seen = HashSet::new();
        for (token, df) in &repr.tokens {
            if *df == 0 || !seen.insert(token.as_str()) {
                return Err(serde::de::Error::custom(format!("bad vocabulary entry {token:?}")));
            }
        }
        Ok(Vocabulary::from_entries(repr.n_docs, repr.tokens))
    }
}
