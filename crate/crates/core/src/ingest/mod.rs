//! Collection of raw posts and reduction to the annotation candidate pool.
//!
//! Posts come from pluggable [`SourceAdapter`]s, are merged and deduplicated
//! by [`consolidate`], then narrowed by [`language_filter`] and
//! [`keyword_filter`].

mod adapter;
mod filter;
mod lexicon;

use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adapter::{
    fetch, fetch_all, fetch_from, AdapterError, Fetch, FetchStats, FileAdapter, Page, RawRecord, RetryPolicy,
    SourceAdapter,
};
pub use filter::{
    consolidate, consolidate_with_stats, keyword_filter, language_filter, language_filter_with, ConsolidateStats,
    Detection, EthiopicScriptDetector, KeywordFilterOutput, LanguageDetector, LanguageFilterOutput,
    DEFAULT_LANGUAGE_THRESHOLD,
};
pub use lexicon::{KeywordLexicon, LexiconError, Theme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Twitter,
    Facebook,
    Youtube,
    File,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Source::Twitter => "twitter",
            Source::Facebook => "facebook",
            Source::Youtube => "youtube",
            Source::File => "file",
        };
        f.write_str(name)
    }
}

/// One ingested social-media post or comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPost {
    pub id: String,
    pub source: Source,
    /// One-way hash of the platform author identifier, see [`hash_author`].
    pub author_hash: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

/// A post that survived filtering, annotated with the lexicon themes it hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolRecord {
    pub id: String,
    pub source: Source,
    pub author_hash: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub keyword_themes: Vec<Theme>,
}

impl PoolRecord {
    pub fn new(post: RawPost, keyword_themes: Vec<Theme>) -> Self {
        PoolRecord {
            id: post.id,
            source: post.source,
            author_hash: post.author_hash,
            text: post.text,
            created_at: post.created_at,
            keyword_themes,
        }
    }
}

/// Hashes a platform author identifier so raw handles never enter the corpus.
pub fn hash_author(raw_author: &str) -> String {
    hex::encode(Sha256::digest(raw_author.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("date_from {from} is after date_to {to}")]
    InvertedWindow { from: NaiveDate, to: NaiveDate },
    #[error("max_items must be positive")]
    ZeroMaxItems,
    #[error("keyword-driven source requires at least one keyword")]
    NoKeywords,
}

/// What to ask a source for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceQuery {
    pub keywords: Vec<String>,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    pub max_items: usize,
}

impl SourceQuery {
    pub fn new(date_from: NaiveDate, date_to: NaiveDate, max_items: usize) -> Self {
        SourceQuery {
            keywords: Vec::new(),
            date_from,
            date_to,
            max_items,
        }
    }

    pub fn validate(&self, keyword_driven: bool) -> Result<(), QueryError> {
        if self.date_from > self.date_to {
            return Err(QueryError::InvertedWindow {
                from: self.date_from,
                to: self.date_to,
            });
        }
        if self.max_items == 0 {
            return Err(QueryError::ZeroMaxItems);
        }
        if keyword_driven && self.keywords.is_empty() {
            return Err(QueryError::NoKeywords);
        }
        Ok(())
    }

    /// Whether `at` falls inside the inclusive date window.
    pub fn contains(&self, at: &DateTime<Utc>) -> bool {
        let day = at.date_naive();
        self.date_from <= day && day <= self.date_to
    }
}
