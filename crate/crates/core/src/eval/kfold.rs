use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sampling::DatasetIndex;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified `k`-fold partition.
///
/// Each class is shuffled and dealt round-robin over the folds, continuing
/// from the fold where the previous class stopped, so per-class fold sizes
/// differ by at most one and total fold sizes stay level. A class with fewer
/// than `k` samples is missing from some test folds.
pub fn stratified_kfold(index: &DatasetIndex, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::contract(format!("k-fold needs k >= 2, got {k}")));
    }
    if index.len() < k {
        return Err(Error::contract(format!("{} samples cannot fill {k} folds", index.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; index.len()];
    let mut next = 0;
    for c in 0..index.num_classes() {
        let mut members = index.class(c).to_vec();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..index.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}
