use std::collections::HashSet;

use super::{CorpusError, HasId};
use crate::rng;

/// Draws `n_splits` pairwise-disjoint evaluation splits.
///
/// `per_split` is a cap: each split holds `min(per_split, available / n_splits)`
/// instances, where `available` counts distinct ids (later duplicates are
/// ignored). The pool is Fisher–Yates shuffled with `seed` and cut into
/// consecutive chunks.
pub fn split_sample<T: HasId + Clone>(
    instances: &[T],
    per_split: usize,
    n_splits: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>, CorpusError> {
    let mut seen = HashSet::new();
    let pool: Vec<&T> = instances.iter().filter(|i| seen.insert(i.id())).collect();
    if n_splits == 0 || pool.len() < n_splits {
        return Err(CorpusError::InsufficientData {
            needed: n_splits.max(1),
            available: pool.len(),
        });
    }
    let size = per_split.min(pool.len() / n_splits);
    let order = rng::shuffled((0..pool.len()).collect::<Vec<_>>(), seed);
    Ok(order
        .chunks(size.max(1))
        .take(n_splits)
        .map(|chunk| {
            chunk
                .iter()
                .take(size)
                .map(|&i| pool[i].clone())
                .collect()
        })
        .collect())
}
