//! Word representation: vocabulary, TF-IDF document vectors, integer
//! sequences for recurrent models and subword skip-gram embeddings.

mod embeddings;
mod sequences;
mod tfidf;
mod vocab;

pub use embeddings::{char_ngrams, train_embeddings, EmbeddingConfig, EmbeddingTable, NGRAM_PREFIX};
pub use sequences::{to_sequences, SequenceBatch};
pub use tfidf::{tfidf, SparseRow, TfidfMatrix};
pub use vocab::{build_vocab, Vocabulary, DEFAULT_MIN_DF, PAD, UNK};

pub(crate) use sequences::encode;
pub(crate) use tfidf::tfidf_row;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
