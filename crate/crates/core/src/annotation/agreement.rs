use crate::label::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KappaError {
    #[error("need >=2 items, got {0}")]
    TooFewItems(usize),
    #[error("item {item} has {found} ratings, expected {expected}")]
    UnequalRatings { item: usize, found: usize, expected: usize },
    #[error("need >=2 ratings per item")]
    TooFewRatings,
}

/// Fleiss' kappa over per-item category counts. Every row must hold the
/// same number of ratings.
///
/// When all ratings fall in one category the chance agreement is 1 and the
/// ratio is undefined; that case is reported as 1.0, since observed
/// agreement is then perfect.
pub fn fleiss_kappa(counts: &[[usize; NUM_CLASSES]]) -> Result<f64, KappaError> {
    if counts.len() < 2 {
        return Err(KappaError::TooFewItems(counts.len()));
    }
    let n: usize = counts[0].iter().sum();
    if n < 2 {
        return Err(KappaError::TooFewRatings);
    }
    if let Some((item, row)) = counts.iter().enumerate().find(|(_, r)| r.iter().sum::<usize>() != n) {
        return Err(KappaError::UnequalRatings {
            item,
            found: row.iter().sum(),
            expected: n,
        });
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|row| (row.iter().map(|&c| (c * c) as f64).sum::<f64>() - nf) / (nf * (nf - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..NUM_CLASSES)
        .map(|j| {
            let pj = counts.iter().map(|r| r[j]).sum::<usize>() as f64 / (items * nf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
