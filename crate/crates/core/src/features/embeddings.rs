//! Skip-gram embeddings with negative sampling over word and character
//! n-gram units.
//!
//! A word is represented by the mean of its own input vector and the input
//! vectors of its boundary-marked character n-grams (`<word>` split into all
//! substrings of length `min_n..=max_n`). After training, in-vocabulary rows
//! hold that composed vector; an out-of-vocabulary word is the mean of the
//! n-gram vectors the table knows.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Row prefix marking n-gram vectors in the table file. `:` never survives
/// normalization, so it cannot collide with a real token.
pub const NGRAM_PREFIX: &str = "ngram:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub epochs: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub negatives: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 100,
            epochs: 5,
            min_n: 3,
            max_n: 6,
            negatives: 5,
            window: 5,
            learning_rate: 0.05,
            min_count: 1,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::Param(m.to_string()));
        if self.dim == 0 {
            return bad("embedding dimension must be positive");
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return bad("n-gram range must satisfy 1 <= min_n <= max_n");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Character n-grams of `<word>` with lengths in `min_n..=max_n`.
pub fn char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for start in 0..chars.len() {
        for n in min_n..=max_n {
            if start + n > chars.len() {
                break;
            }
            out.push(chars[start..start + n].iter().collect());
        }
    }
    out
}

/// Word vectors plus the n-gram vectors used to compose unseen words.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    min_n: usize,
    max_n: usize,
    words: Vec<(String, Vec<f64>)>,
    word_index: HashMap<String, usize>,
    ngrams: Vec<(String, Vec<f64>)>,
    ngram_index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(
        dim: usize,
        (min_n, max_n): (usize, usize),
        words: Vec<(String, Vec<f64>)>,
        ngrams: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, FeatureError> {
        if dim == 0 {
            return Err(FeatureError::Param("embedding dimension must be positive".into()));
        }
        for (name, v) in words.iter().chain(ngrams.iter()) {
            if v.len() != dim {
                return Err(FeatureError::Param(format!(
                    "vector for {name:?} has dimension {} instead of {dim}",
                    v.len()
                )));
            }
        }
        let word_index = words.iter().enumerate().map(|(i, (w, _))| (w.clone(), i)).collect();
        let ngram_index = ngrams.iter().enumerate().map(|(i, (g, _))| (g.clone(), i)).collect();
        Ok(EmbeddingTable {
            dim,
            min_n,
            max_n,
            words,
            word_index,
            ngrams,
            ngram_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_ngrams(&self) -> usize {
        self.ngrams.len()
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    pub fn ngram_vector(&self, ngram: &str) -> Option<&[f64]> {
        self.ngram_index.get(ngram).map(|&i| self.ngrams[i].1.as_slice())
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }

    /// Vector for `word`: the stored row when known, otherwise the mean of
    /// its known n-gram vectors. `None` if neither exists.
    pub fn vector(&self, word: &str) -> Option<Vec<f64>> {
        if let Some(&i) = self.word_index.get(word) {
            return Some(self.words[i].1.clone());
        }
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for g in char_ngrams(word, self.min_n, self.max_n) {
            if let Some(v) = self.ngram_vector(&g) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                count += 1;
            }
        }
        (count > 0).then(|| {
            sum.iter_mut().for_each(|s| *s /= count as f64);
            sum
        })
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
    }

    /// Text format: `count dim` header, then `token v1 .. vd` rows. N-gram
    /// rows carry the [`NGRAM_PREFIX`]; a leading `#ngrams min max` line
    /// records the n-gram range when n-gram rows are present.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.words.len() + self.ngrams.len(), self.dim);
        let mut row = |name: &str, v: &[f64]| {
            out.push_str(name);
            for x in v {
                write!(out, " {x}").expect("writing to a String");
            }
            out.push('\n');
        };
        for (w, v) in &self.words {
            row(w, v);
        }
        for (g, v) in &self.ngrams {
            row(&format!("{NGRAM_PREFIX}{g}"), v);
        }
        if !self.ngrams.is_empty() {
            writeln!(out, "#ngrams {} {}", self.min_n, self.max_n).expect("writing to a String");
        }
        out
    }

    /// Parses [`EmbeddingTable::to_text`] output or a plain pretrained
    /// word-vector file.
    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let err = |line: usize, reason: String| FeatureError::Parse { line: line + 1, reason };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(0, "missing header".into()))?;
        let header: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| err(0, "header must be `count dim`".into()))?;
        let &[count, dim] = header.as_slice() else {
            return Err(err(0, "header must be `count dim`".into()));
        };
        let (mut min_n, mut max_n) = (3, 6);
        let mut words = Vec::new();
        let mut ngrams = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(range) = line.strip_prefix("#ngrams ") {
                let r: Vec<usize> = range
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(i, "bad n-gram range".into()))?;
                let &[a, b] = r.as_slice() else {
                    return Err(err(i, "bad n-gram range".into()));
                };
                (min_n, max_n) = (a, b);
                continue;
            }
            let mut parts = line.split(' ');
            let name = parts.next().unwrap_or_default().to_string();
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| err(i, format!("bad value: {e}")))?;
            if v.len() != dim {
                return Err(err(i, format!("expected {dim} values, found {}", v.len())));
            }
            match name.strip_prefix(NGRAM_PREFIX) {
                Some(g) => ngrams.push((g.to_string(), v)),
                None => words.push((name, v)),
            }
        }
        if words.len() + ngrams.len() != count {
            return Err(err(
                0,
                format!("header announces {count} rows, found {}", words.len() + ngrams.len()),
            ));
        }
        EmbeddingTable::new(dim, (min_n, max_n), words, ngrams)
    }
}

struct SubwordModel {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    /// Input rows composing each word: its own row then its n-gram rows.
    subwords: Vec<Vec<usize>>,
}

impl SubwordModel {
    fn input_row(&self, r: usize) -> &[f64] {
        &self.input[r * self.dim..(r + 1) * self.dim]
    }

    fn compose(&self, word: usize, hidden: &mut [f64]) {
        hidden.iter_mut().for_each(|h| *h = 0.0);
        let rows = &self.subwords[word];
        for &r in rows {
            hidden.iter_mut().zip(self.input_row(r)).for_each(|(h, x)| *h += x);
        }
        let scale = 1.0 / rows.len() as f64;
        hidden.iter_mut().for_each(|h| *h *= scale);
    }

    /// One logistic update against output row `target`; accumulates the
    /// hidden-layer gradient into `grad`.
    fn binary_update(&mut self, target: usize, label: f64, lr: f64, hidden: &[f64], grad: &mut [f64]) {
        let out = &mut self.output[target * self.dim..(target + 1) * self.dim];
        let score: f64 = out.iter().zip(hidden).map(|(o, h)| o * h).sum();
        let g = lr * (label - sigmoid(score));
        for ((gr, o), h) in grad.iter_mut().zip(out.iter_mut()).zip(hidden) {
            *gr += g * *o;
            *o += g * h;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains skip-gram subword embeddings over tokenized documents.
/// Single-threaded and fully determined by `config.seed`.
pub fn train_embeddings<S: AsRef<str>>(
    docs: &[Vec<S>],
    config: &EmbeddingConfig,
) -> Result<EmbeddingTable, FeatureError> {
    config.validate()?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count.max(1))
        .collect();
    if vocab.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let word_id: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, &(w, _))| (w, i)).collect();

    let ngram_names: Vec<String> = vocab
        .iter()
        .flat_map(|(w, _)| char_ngrams(w, config.min_n, config.max_n))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ngram_id: HashMap<&str, usize> = ngram_names.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let n_words = vocab.len();
    let subwords: Vec<Vec<usize>> = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| {
            std::iter::once(i)
                .chain(
                    char_ngrams(w, config.min_n, config.max_n)
                        .iter()
                        .map(|g| n_words + ngram_id[g.as_str()]),
                )
                .collect()
        })
        .collect();

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 1.0 / dim as f64;
    let input: Vec<f64> = (0..(n_words + ngram_names.len()) * dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let mut model = SubwordModel {
        dim,
        input,
        output: vec![0.0; n_words * dim],
        subwords,
    };

    let noise = WeightedIndex::new(vocab.iter().map(|&(_, c)| (c as f64).sqrt()))
        .map_err(|e| FeatureError::Param(e.to_string()))?;
    let sentences: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.iter().filter_map(|t| word_id.get(t.as_ref()).copied()).collect())
        .collect();
    let total_tokens: usize = sentences.iter().map(Vec::len).sum::<usize>().max(1);
    let total_steps = (total_tokens * config.epochs).max(1) as f64;

    let mut hidden = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut step = 0usize;
    for _ in 0..config.epochs {
        for sentence in &sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let span = rng.random_range(1..=config.window);
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(sentence.len() - 1);
                model.compose(center, &mut hidden);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sentence[ctx_pos];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    model.binary_update(context, 1.0, lr, &hidden, &mut grad);
                    for _ in 0..config.negatives {
                        let neg = noise.sample(&mut rng);
                        if neg != context {
                            model.binary_update(neg, 0.0, lr, &hidden, &mut grad);
                        }
                    }
                    for &r in &model.subwords[center] {
                        let row = &mut model.input[r * dim..(r + 1) * dim];
                        row.iter_mut().zip(&grad).for_each(|(x, g)| *x += g);
                    }
                }
            }
        }
    }

    let words = vocab
        .iter()
        .enumerate()
        .map(|(i, &(w, _))| {
            model.compose(i, &mut hidden);
            (w.to_string(), hidden.clone())
        })
        .collect();
    let ngrams = ngram_names
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g, model.input_row(n_words + i).to_vec()))
        .collect();
    EmbeddingTable::new(dim, (config.min_n, config.max_n), words, ngrams)
}
