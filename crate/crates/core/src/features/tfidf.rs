use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{FeatureError, Vocabulary, PAD, UNK};
use crate::textnorm::CleanDocument;

/// Offset between vocabulary indices and matrix columns (pad and unknown
/// have no column).
const COLUMN_OFFSET: usize = 2;

/// One sparse row, column indices ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<f64> {
        let mut dense = vec![0.0; n_cols];
        for (c, v) in self.iter() {
            dense[c] = v;
        }
        dense
    }
}

/// Row-sparse document-term matrix. Column `j` holds vocabulary index `j + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfMatrix {
    pub n_cols: usize,
    pub rows: Vec<SparseRow>,
}

impl TfidfMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.to_dense(self.n_cols)).collect()
    }

    /// Coordinate triplets: header `rows cols nnz`, then `row col value`.
    pub fn to_coo_string(&self) -> String {
        let nnz: usize = self.rows.iter().map(SparseRow::nnz).sum();
        let mut out = format!("{} {} {}\n", self.n_rows(), self.n_cols, nnz);
        for (r, row) in self.rows.iter().enumerate() {
            for (c, v) in row.iter() {
                writeln!(out, "{r} {c} {v}").expect("writing to a String");
            }
        }
        out
    }

    pub fn from_coo_str(text: &str) -> Result<Self, FeatureError> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, reason: &str| FeatureError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(0, "bad header"))?;
        let &[n_rows, n_cols, nnz] = dims.as_slice() else {
            return Err(parse_err(0, "header must be `rows cols nnz`"));
        };
        let mut cells: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_rows];
        let mut seen = 0;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [r, c, v] = parts.as_slice() else {
                return Err(parse_err(i, "expected `row col value`"));
            };
            let r: usize = r.parse().map_err(|_| parse_err(i, "bad row"))?;
            let c: usize = c.parse().map_err(|_| parse_err(i, "bad column"))?;
            let v: f64 = v.parse().map_err(|_| parse_err(i, "bad value"))?;
            if r >= n_rows || c >= n_cols {
                return Err(parse_err(i, "coordinate out of range"));
            }
            cells[r].insert(c, v);
            seen += 1;
        }
        if seen != nnz {
            return Err(parse_err(0, "nnz does not match triplet count"));
        }
        let rows = cells
            .into_iter()
            .map(|m| {
                let (indices, values) = m.into_iter().unzip();
                SparseRow { indices, values }
            })
            .collect();
        Ok(TfidfMatrix { n_cols, rows })
    }
}

/// TF-IDF with raw term counts and smoothed idf, rows L2-normalized.
/// Tokens outside the vocabulary are ignored; a document with no known
/// token yields an all-zero row.
pub fn tfidf(docs: &[CleanDocument], vocab: &Vocabulary) -> TfidfMatrix {
    TfidfMatrix {
        n_cols: vocab.num_terms(),
        rows: docs.iter().map(|d| tfidf_row(&d.tokens, vocab)).collect(),
    }
}

pub(crate) fn tfidf_row<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> SparseRow {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        let idx = vocab.index_of(t.as_ref());
        if idx != UNK && idx != PAD {
            *counts.entry(idx).or_default() += 1.0;
        }
    }
    let mut row = SparseRow::default();
    for (idx, tf) in counts {
        row.indices.push(idx - COLUMN_OFFSET);
        row.values.push(tf * vocab.idf_at(idx));
    }
    let norm = row.norm();
    if norm > 0.0 {
        row.values.iter_mut().for_each(|v| *v /= norm);
    }
    row
}

#[cfg(test)]
mod tests {
    use super::super::build_vocab;
    use super::*;
    use approx::assert_abs_diff_eq;

    fn docs(texts: &[&str]) -> Vec<CleanDocument> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| CleanDocument::from_tokens(i.to_string(), t.split_whitespace().map(String::from).collect()))
            .collect()
    }

    #[test]
    fn worked_example() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = build_vocab(&corpus, 1).unwrap();
        assert_abs_diff_eq!(vocab.idf_at(vocab.index_of("a")), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vocab.idf_at(vocab.index_of("b")), 1.4054651081081644, epsilon = 1e-12);
        let m = tfidf(&corpus, &vocab);
        let row = m.rows[0].to_dense(m.n_cols);
        assert_abs_diff_eq!(row[0], 0.5797386715376657, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 0.8148024746671689, epsilon = 1e-12);
        assert_eq!(row[2], 0.0);
    }

    #[test]
    fn unseen_and_duplicate_documents() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = build_vocab(&corpus, 1).unwrap();
        let m = tfidf(&docs(&["x y", "a b", "a b", ""]), &vocab);
        assert_eq!(m.rows[0].nnz(), 0);
        assert_eq!(m.rows[1], m.rows[2]);
        assert_eq!(m.rows[3].nnz(), 0);
        assert_eq!(m.n_cols, vocab.len() - 2);
    }

    #[test]
    fn coo_round_trip() {
        let corpus = docs(&["a b b", "a c", "d"]);
        let vocab = build_vocab(&corpus, 1).unwrap();
        let m = tfidf(&corpus, &vocab);
        let text = m.to_coo_string();
        let back = TfidfMatrix::from_coo_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_coo_string(), text);
        assert!(TfidfMatrix::from_coo_str("2 2 1\n0 5 1.0\n").is_err());
        assert!(TfidfMatrix::from_coo_str("2 2 2\n0 1 1.0\n").is_err());
    }
}
