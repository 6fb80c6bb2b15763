//! Class balancing for the training split.
//!
//! [`smote`] interpolates new minority points between a sample and one of
//! its nearest minority neighbours; [`oversample_duplicates`] resamples
//! existing items with replacement, for representations (token sequences)
//! that cannot be interpolated. Neither ever touches validation or test data:
//! callers pass the training split only.

use std::collections::BTreeMap;
use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BalanceError {
    #[error("cannot interpolate: need at least 2 minority points, got {0}")]
    CannotInterpolate(usize),
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("target count {target} is below the {have} existing points")]
    TargetTooSmall { target: usize, have: usize },
    #[error("class {0} has no examples")]
    EmptyClass(String),
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    Smote,
    Duplicate,
}

/// Per-label example counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts<L: Ord>(pub BTreeMap<L, usize>);

impl<L: Ord + Clone> ClassCounts<L> {
    pub fn of<'a, I: IntoIterator<Item = &'a L>>(labels: I) -> Self
    where
        L: 'a,
    {
        let mut counts = BTreeMap::new();
        for l in labels {
            *counts.entry(l.clone()).or_default() += 1;
        }
        ClassCounts(counts)
    }

    pub fn max(&self) -> usize {
        self.0.values().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn get(&self, label: &L) -> usize {
        self.0.get(label).copied().unwrap_or(0)
    }
}

/// Supplies the random choices SMOTE makes, so tests can pin them.
pub trait InterpolationSource {
    /// Index into the base point's neighbour list, in `0..k`.
    fn pick_neighbor(&mut self, k: usize) -> usize;
    /// Interpolation weight in `[0, 1]`.
    fn lambda(&mut self) -> f64;
}

impl<R: Rng> InterpolationSource for R {
    fn pick_neighbor(&mut self, k: usize) -> usize {
        self.random_range(0..k)
    }

    fn lambda(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// A generated point and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPoint {
    pub vector: Vec<f64>,
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` points closest to `points[i]` (excluding `i`), nearest
/// first; equal distances are ordered by index.
pub fn nearest_neighbors(points: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (squared_distance(&points[i], p), j))
        .collect();
    let k = k.min(others.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < others.len() {
        others.select_nth_unstable_by(k, cmp);
        others.truncate(k);
    }
    others.sort_by(cmp);
    others.into_iter().map(|(_, j)| j).collect()
}

fn check_smote_args(minority: &[Vec<f64>], target_count: usize, k: usize) -> Result<(), BalanceError> {
    let n = minority.len();
    if n < 2 {
        return Err(BalanceError::CannotInterpolate(n));
    }
    if k == 0 || k > n - 1 {
        return Err(BalanceError::KOutOfRange { k, max: n - 1 });
    }
    if target_count < n {
        return Err(BalanceError::TargetTooSmall {
            target: target_count,
            have: n,
        });
    }
    let dim = minority[0].len();
    if let Some((index, p)) = minority.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(BalanceError::DimensionMismatch {
            index,
            expected: dim,
            found: p.len(),
        });
    }
    Ok(())
}

/// Generates `target_count - minority.len()` synthetic points. Base points
/// are taken round-robin in index order.
pub fn smote_with(
    minority: &[Vec<f64>],
    target_count: usize,
    k: usize,
    source: &mut impl InterpolationSource,
) -> Result<Vec<SyntheticPoint>, BalanceError> {
    check_smote_args(minority, target_count, k)?;
    let n = minority.len();
    let needed = target_count - n;
    let mut neighbor_cache: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut out = Vec::with_capacity(needed);
    for j in 0..needed {
        let base = j % n;
        let neighbors = neighbor_cache[base].get_or_insert_with(|| nearest_neighbors(minority, base, k));
        let neighbor = neighbors[source.pick_neighbor(k)];
        let lambda = source.lambda();
        let x = &minority[base];
        let vector = x
            .iter()
            .zip(&minority[neighbor])
            .map(|(a, b)| a + lambda * (b - a))
            .collect();
        out.push(SyntheticPoint {
            vector,
            base,
            neighbor,
            lambda,
        });
    }
    Ok(out)
}

/// SMOTE with a seeded generator.
pub fn smote(minority: &[Vec<f64>], target_count: usize, k: usize, seed: u64) -> Result<Vec<Vec<f64>>, BalanceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(smote_with(minority, target_count, k, &mut rng)?
        .into_iter()
        .map(|s| s.vector)
        .collect())
}

/// Where a balanced item came from. Indices refer to the input example list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Origin {
    Original { index: usize },
    Synthetic { base: usize, neighbor: usize },
    Duplicate { of: usize },
}

impl Origin {
    pub fn is_original(&self) -> bool {
        matches!(self, Origin::Original { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced<L, T> {
    pub label: L,
    pub features: T,
    pub origin: Origin,
}

fn group_by_class<L: Ord + Clone + Debug, T>(
    examples: &[(L, T)],
    classes: &[L],
) -> Result<BTreeMap<L, Vec<usize>>, BalanceError> {
    let mut groups: BTreeMap<L, Vec<usize>> = classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    for (i, (label, _)) in examples.iter().enumerate() {
        groups.entry(label.clone()).or_default().push(i);
    }
    if let Some((label, _)) = groups.iter().find(|(_, members)| members.is_empty()) {
        return Err(BalanceError::EmptyClass(format!("{label:?}")));
    }
    Ok(groups)
}

fn originals<L: Clone, T: Clone>(examples: &[(L, T)]) -> Vec<Balanced<L, T>> {
    examples
        .iter()
        .enumerate()
        .map(|(index, (label, features))| Balanced {
            label: label.clone(),
            features: features.clone(),
            origin: Origin::Original { index },
        })
        .collect()
}

/// Brings every class up to the majority count by resampling existing items
/// with replacement. `classes` lists labels that must be present (each must
/// have at least one example); pass `&[]` to use the observed labels.
pub fn oversample_duplicates<L, T>(
    examples: &[(L, T)],
    classes: &[L],
    seed: u64,
) -> Result<Vec<Balanced<L, T>>, BalanceError>
where
    L: Ord + Clone + Debug,
    T: Clone,
{
    let groups = group_by_class(examples, classes)?;
    let target = groups.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = originals(examples);
    for (label, members) in &groups {
        for _ in members.len()..target {
            let of = members[rng.random_range(0..members.len())];
            out.push(Balanced {
                label: label.clone(),
                features: examples[of].1.clone(),
                origin: Origin::Duplicate { of },
            });
        }
    }
    Ok(out)
}

/// Balances labelled feature vectors so every class reaches the majority
/// count. In SMOTE mode the neighbourhood size is capped at `class size - 1`
/// for small classes.
pub fn balance_dataset<L>(
    examples: &[(L, Vec<f64>)],
    classes: &[L],
    mode: BalanceMode,
    k: usize,
    seed: u64,
) -> Result<Vec<Balanced<L, Vec<f64>>>, BalanceError>
where
    L: Ord + Clone + Debug,
{
    if mode == BalanceMode::Duplicate {
        return oversample_duplicates(examples, classes, seed);
    }
    let groups = group_by_class(examples, classes)?;
    let target = groups.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = originals(examples);
    for (label, members) in &groups {
        if members.len() == target {
            continue;
        }
        let points: Vec<Vec<f64>> = members.iter().map(|&i| examples[i].1.clone()).collect();
        let k_eff = k.min(points.len().saturating_sub(1)).max(1);
        for s in smote_with(&points, target, k_eff, &mut rng)? {
            out.push(Balanced {
                label: label.clone(),
                features: s.vector,
                origin: Origin::Synthetic {
                    base: members[s.base],
                    neighbor: members[s.neighbor],
                },
            });
        }
    }
    Ok(out)
}
