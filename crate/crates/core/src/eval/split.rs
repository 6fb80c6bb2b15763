use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::label::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), EvalError> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.train <= 0.0 {
            return Err(EvalError::Ratios(format!(
                "{all:?}: train must be positive, val and test non-negative"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvalError::Ratios(format!("{all:?} do not sum to 1")));
        }
        Ok(())
    }
}

/// Example indices per split, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// SHA-256 over the item ids of each split, so reports from different
    /// runs can be checked for sharing a split.
    pub fn fingerprint<S: AsRef<str>>(&self, ids: &[S]) -> String {
        let mut h = Sha256::new();
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            h.update(name.as_bytes());
            for &i in part {
                h.update([0]);
                h.update(ids[i].as_ref().as_bytes());
            }
            h.update([1]);
        }
        hex::encode(h.finalize())
    }
}

/// Count for a split of `n` at `ratio`, guarding against `0.1 * 30`
/// landing just under an integer.
fn share(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio + 1e-9).floor() as usize
}

/// Stratified split. Within each class, validation and test receive
/// `floor(n · ratio)` examples and training gets the remainder.
pub fn stratified_split(labels: &[Label], ratios: SplitRatios, seed: u64) -> Result<SplitIndices, EvalError> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = members.len();
        let (n_val, n_test) = (share(n, ratios.val), share(n, ratios.test));
        let n_train = n - n_val - n_test;
        for (split, ratio, size) in [
            ("train", ratios.train, n_train),
            ("val", ratios.val, n_val),
            ("test", ratios.test, n_test),
        ] {
            if ratio > 0.0 && size == 0 {
                return Err(EvalError::ClassTooSmall {
                    class,
                    split,
                    available: n,
                });
            }
        }
        members.shuffle(&mut rng);
        out.val.extend_from_slice(&members[..n_val]);
        out.test.extend_from_slice(&members[n_val..n_val + n_test]);
        out.train.extend_from_slice(&members[n_val + n_test..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(n: usize) -> Vec<Label> {
        (0..n).map(|i| Label::ALL[i % 4]).collect()
    }

    #[test]
    fn rounding_rule() {
        // 25 per class: floor(2.5) = 2 to val and test, 21 to train
        let s = stratified_split(&balanced(100), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (84, 8, 8));
    }

    #[test]
    fn degenerate_ratios_keep_everything_in_train() {
        let ratios = SplitRatios {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        let s = stratified_split(&balanced(10), ratios, 0).unwrap();
        assert_eq!(s.train, (0..10).collect::<Vec<_>>());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn small_class_is_named() {
        let mut labels = balanced(40);
        labels.retain(|l| *l != Label::Gender);
        labels.extend([Label::Gender; 5]);
        let err = stratified_split(&labels, SplitRatios::default(), 0).unwrap_err();
        assert!(err.to_string().contains("gender"), "{err}");
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(matches!(stratified_split(&labels, bad, 0), Err(EvalError::Ratios(_))));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_exhaustive_and_stratified(
            counts in prop::array::uniform4(10usize..40),
            seed in any::<u64>(),
        ) {
            let labels: Vec<Label> = Label::ALL
                .iter()
                .zip(counts)
                .flat_map(|(l, n)| std::iter::repeat_n(*l, n))
                .collect();
            let s = stratified_split(&labels, SplitRatios::default(), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, n) in Label::ALL.iter().zip(counts) {
                let in_val = s.val.iter().filter(|&&i| labels[i] == *c).count();
                prop_assert_eq!(in_val, n / 10);
            }
            prop_assert_eq!(&s, &stratified_split(&labels, SplitRatios::default(), seed).unwrap());
        }
    }
}
