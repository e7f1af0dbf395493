use super::{CorpusError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random partition into `⌊n·train_frac⌋` training and the remaining test items.
///
/// Deterministic for a given seed; each part keeps the input order.
pub fn split_instances<T>(instances: Vec<T>, train_frac: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(CorpusError::InvalidFraction(train_frac));
    }
    if instances.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let n = instances.len();
    let n_train = (n as f64 * train_frac).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (item, is_train) in instances.into_iter().zip(in_train) {
        if is_train {
            train.push(item);
        } else {
            test.push(item);
        }
    }
    Ok((train, test))
}
