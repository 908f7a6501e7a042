//! Exhaustive grid search and seeded random sampling, the two reference
//! methods the optimiser is compared against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Objective;
use crate::error::{Error, Result};
use crate::partition::ParamSpace;

/// Largest grid `grid_search` will enumerate.
pub const GRID_LIMIT: u128 = 50_000_000;

/// Points evaluated per objective call.
pub const BATCH: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub min_value: f64,
    pub argmin: Vec<f64>,
    pub evaluations: usize,
}

fn objective_error(e: crate::engine::ObjectiveError) -> Error {
    Error::InvalidArgument(format!("objective failed: {e}"))
}

/// Strict `<` keeps the first occurrence, so the lowest linear index wins ties.
fn fold_batch(best: &mut Option<(f64, Vec<f64>)>, points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<()> {
    if values.len() != points.len() {
        return Err(Error::MalformedQueryResults {
            expected: points.len(),
            got: values.len(),
        });
    }
    for (p, v) in points.into_iter().zip(values) {
        if v.is_nan() {
            return Err(Error::InvalidArgument("objective returned NaN".into()));
        }
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            *best = Some((v, p));
        }
    }
    Ok(())
}

/// Full Cartesian grid with both endpoints per dimension, first dimension
/// varying slowest.
pub fn grid_search<O: Objective>(objective: O, space: &ParamSpace, points_per_dim: usize) -> Result<OracleResult> {
    grid_search_sizes(objective, space, &vec![points_per_dim; space.dim()])
}

/// As [`grid_search`] with a separate resolution per dimension.
pub fn grid_search_sizes<O: Objective>(objective: O, space: &ParamSpace, sizes: &[usize]) -> Result<OracleResult> {
    if sizes.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: sizes.len(),
        });
    }
    if let Some(&k) = sizes.iter().find(|&&k| k < 2) {
        return Err(Error::InvalidArgument(format!("need at least 2 grid points per dimension, got {k}")));
    }
    let total = sizes
        .iter()
        .try_fold(1u128, |acc, &k| acc.checked_mul(k as u128))
        .unwrap_or(u128::MAX);
    if total > GRID_LIMIT {
        return Err(Error::GridTooLarge {
            points: total,
            limit: GRID_LIMIT,
        });
    }
    let total = total as usize;
    let axes: Vec<Vec<f64>> = sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (lo, hi) = (space.lower(i), space.upper(i));
            (0..k)
                .map(|j| if j + 1 == k { hi } else { lo + (hi - lo) * j as f64 / (k - 1) as f64 })
                .collect()
        })
        .collect();
    let mut best = None;
    let mut start = 0;
    while start < total {
        let end = (start + BATCH).min(total);
        let points: Vec<Vec<f64>> = (start..end)
            .map(|mut idx| {
                let mut p = vec![0.0; sizes.len()];
                for d in (0..sizes.len()).rev() {
                    p[d] = axes[d][idx % sizes[d]];
                    idx /= sizes[d];
                }
                p
            })
            .collect();
        let values = objective.evaluate(&points).map_err(objective_error)?;
        fold_batch(&mut best, points, values)?;
        start = end;
    }
    let (min_value, argmin) = best.expect("grid is non-empty");
    Ok(OracleResult {
        min_value,
        argmin,
        evaluations: total,
    })
}

/// Per-dimension resolution `min(max_per_dim, ⌊cap^(1/n)⌋)`, at least 2.
pub fn capped_grid_size(dim: usize, max_per_dim: usize, cap: usize) -> usize {
    let mut k = (cap as f64).powf(1.0 / dim as f64).floor() as usize;
    // Guard against the root landing just below an exact integer.
    while (k + 1).checked_pow(dim as u32).is_some_and(|v| v <= cap) {
        k += 1;
    }
    k.min(max_per_dim).max(2)
}

/// Minimum over `n_samples` uniform draws from a ChaCha8 stream seeded with
/// `seed`; sample `i` is identical for every `n_samples > i`.
pub fn random_pick<O: Objective>(objective: O, space: &ParamSpace, n_samples: usize, seed: u64) -> Result<OracleResult> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("random pick needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = None;
    let mut remaining = n_samples;
    while remaining > 0 {
        let n = remaining.min(BATCH);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..space.dim()).map(|i| rng.gen_range(space.lower(i)..=space.upper(i))).collect())
            .collect();
        let values = objective.evaluate(&points).map_err(objective_error)?;
        fold_batch(&mut best, points, values)?;
        remaining -= n;
    }
    let (min_value, argmin) = best.expect("at least one sample");
    Ok(OracleResult {
        min_value,
        argmin,
        evaluations: n_samples,
    })
}

/// A method matches the oracle when its minimum is equal to or smaller than
/// the oracle's, up to `tolerance`.
pub fn match_metric(method_min: f64, oracle_min: f64, tolerance: f64) -> bool {
    method_min <= oracle_min + tolerance
}
