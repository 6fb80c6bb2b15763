use std::collections::{BTreeMap, HashSet};

use sha2::{Digest, Sha256};

use super::{KeywordLexicon, LexiconError, PoolRecord, RawPost, Theme};
use crate::textnorm::{self, Normalizer};

pub const DEFAULT_LANGUAGE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsolidateStats {
    pub input: usize,
    pub duplicate_text: usize,
    pub duplicate_id: usize,
}

/// Merges streams into one list ordered by `(created_at, id)`, dropping
/// posts whose normalized text (or id) was already seen.
pub fn consolidate(streams: Vec<Vec<RawPost>>) -> Vec<RawPost> {
    consolidate_with_stats(streams, &Normalizer::default()).0
}

pub fn consolidate_with_stats(streams: Vec<Vec<RawPost>>, normalizer: &Normalizer) -> (Vec<RawPost>, ConsolidateStats) {
    let mut all: Vec<RawPost> = streams.into_iter().flatten().collect();
    let mut stats = ConsolidateStats {
        input: all.len(),
        ..Default::default()
    };
    all.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));

    let mut seen_text = HashSet::new();
    let mut seen_id = HashSet::new();
    let mut out = Vec::with_capacity(all.len());
    for post in all {
        let key: [u8; 32] = Sha256::digest(normalizer.normalize(&post.text).as_bytes()).into();
        if !seen_text.insert(key) {
            stats.duplicate_text += 1;
            continue;
        }
        if !seen_id.insert(post.id.clone()) {
            stats.duplicate_id += 1;
            continue;
        }
        out.push(post);
    }
    (out, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Amharic,
    Other,
    /// No alphabetic codepoints to judge by.
    Undetectable,
}

/// Decides whether a text is Amharic.
pub trait LanguageDetector: Sync {
    fn detect(&self, text: &str) -> Detection;
}

/// Accepts text whose alphabetic codepoints are mostly in the Ethiopic block
/// (U+1200..=U+137F).
#[derive(Debug, Clone, Copy)]
pub struct EthiopicScriptDetector {
    pub threshold: f64,
}

impl Default for EthiopicScriptDetector {
    fn default() -> Self {
        EthiopicScriptDetector {
            threshold: DEFAULT_LANGUAGE_THRESHOLD,
        }
    }
}

impl EthiopicScriptDetector {
    pub fn new(threshold: f64) -> Self {
        EthiopicScriptDetector { threshold }
    }

    /// Fraction of alphabetic codepoints that are Ethiopic, `None` when there
    /// are no alphabetic codepoints.
    pub fn ethiopic_fraction(text: &str) -> Option<f64> {
        let (mut alpha, mut ethiopic) = (0usize, 0usize);
        for c in text.chars().filter(|c| c.is_alphabetic()) {
            alpha += 1;
            if ('\u{1200}'..='\u{137F}').contains(&c) {
                ethiopic += 1;
            }
        }
        (alpha > 0).then(|| ethiopic as f64 / alpha as f64)
    }
}

impl LanguageDetector for EthiopicScriptDetector {
    fn detect(&self, text: &str) -> Detection {
        match Self::ethiopic_fraction(text) {
            None => Detection::Undetectable,
            Some(f) if f >= self.threshold => Detection::Amharic,
            Some(_) => Detection::Other,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LanguageFilterOutput {
    pub kept: Vec<RawPost>,
    pub rejected_other: usize,
    pub rejected_undetectable: usize,
}

/// Keeps posts the default detector classifies as Amharic at `threshold`.
pub fn language_filter(posts: Vec<RawPost>, threshold: f64) -> Vec<RawPost> {
    language_filter_with(posts, &EthiopicScriptDetector::new(threshold)).kept
}

pub fn language_filter_with(posts: Vec<RawPost>, detector: &dyn LanguageDetector) -> LanguageFilterOutput {
    let mut out = LanguageFilterOutput::default();
    for post in posts {
        match detector.detect(&post.text) {
            Detection::Amharic => out.kept.push(post),
            Detection::Other => out.rejected_other += 1,
            Detection::Undetectable => out.rejected_undetectable += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordFilterOutput {
    pub pool: Vec<PoolRecord>,
    /// Number of kept posts matching each theme.
    pub theme_counts: BTreeMap<Theme, usize>,
    pub dropped: usize,
}

/// Keeps posts with at least one whole-token lexicon match after normalization.
pub fn keyword_filter(
    posts: Vec<RawPost>,
    lexicon: &KeywordLexicon,
    normalizer: &Normalizer,
) -> Result<KeywordFilterOutput, LexiconError> {
    if lexicon.is_empty() {
        return Err(LexiconError::Empty);
    }
    let mut out = KeywordFilterOutput::default();
    for post in posts {
        let tokens = textnorm::tokenize(&normalizer.normalize(&post.text));
        let themes = lexicon.match_themes(&tokens);
        if themes.is_empty() {
            out.dropped += 1;
            continue;
        }
        for &theme in &themes {
            *out.theme_counts.entry(theme).or_default() += 1;
        }
        out.pool.push(PoolRecord::new(post, themes));
    }
    Ok(out)
}
