use super::{FeatureError, Vocabulary, PAD};
use crate::textnorm::CleanDocument;

/// Right-padded index sequences plus the true (unpadded) lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBatch {
    pub max_len: usize,
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The unpadded prefix of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i][..self.lengths[i]]
    }
}

/// Maps tokens to indices (unknown to 1), truncates to `max_len` and
/// right-pads with 0.
pub fn to_sequences(docs: &[CleanDocument], vocab: &Vocabulary, max_len: usize) -> Result<SequenceBatch, FeatureError> {
    if max_len == 0 {
        return Err(FeatureError::Param("max_len must be at least 1".into()));
    }
    let mut ids = Vec::with_capacity(docs.len());
    let mut lengths = Vec::with_capacity(docs.len());
    for doc in docs {
        let (row, len) = encode(&doc.tokens, vocab, max_len);
        ids.push(row);
        lengths.push(len);
    }
    Ok(SequenceBatch { max_len, ids, lengths })
}

pub(crate) fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, usize) {
    let mut row: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.index_of(t.as_ref()))
        .collect();
    let len = row.len();
    row.resize(max_len, PAD);
    (row, len)
}

#[cfg(test)]
mod tests {
    use super::super::{build_vocab, UNK};
    use super::*;
    use proptest::prelude::*;

    fn doc(text: &str) -> CleanDocument {
        CleanDocument::from_tokens("d", text.split_whitespace().map(String::from).collect())
    }

    #[test]
    fn examples() {
        // vocabulary with a -> 2, b -> 3
        let vocab = build_vocab(&[doc("a b"), doc("a")], 1).unwrap();
        assert_eq!((vocab.index_of("a"), vocab.index_of("b")), (2, 3));

        let s = to_sequences(&[doc("a b")], &vocab, 4).unwrap();
        assert_eq!(s.ids[0], [2, 3, 0, 0]);
        assert_eq!(s.lengths[0], 2);

        let s = to_sequences(&[doc("")], &vocab, 3).unwrap();
        assert_eq!((s.ids[0].as_slice(), s.lengths[0]), ([0, 0, 0].as_slice(), 0));

        let s = to_sequences(&[doc("b a z a b")], &vocab, 3).unwrap();
        assert_eq!((s.ids[0].as_slice(), s.lengths[0]), ([3, 2, UNK].as_slice(), 3));

        assert!(to_sequences(&[doc("a")], &vocab, 0).is_err());
    }

    proptest! {
        #[test]
        fn de_indexing_recovers_known_prefix(words in prop::collection::vec("[a-f]", 0..12), max_len in 1usize..8) {
            let vocab = build_vocab(&[doc("a b c d")], 1).unwrap();
            let d = CleanDocument::from_tokens("d", words.clone());
            let s = to_sequences(&[d], &vocab, max_len).unwrap();
            let decoded: Vec<Option<&str>> = s.row(0).iter().map(|&i| vocab.token(i)).collect();
            let expected: Vec<Option<&str>> = words
                .iter()
                .take(max_len)
                .map(|w| vocab.get(w).map(|_| w.as_str()))
                .collect();
            prop_assert_eq!(decoded, expected);
            prop_assert!(s.ids[0][s.lengths[0]..].iter().all(|&i| i == PAD));
        }
    }
}
