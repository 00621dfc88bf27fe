use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Index sets into the corpus, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle once, cut into `k` near-equal chunks; fold i tests on chunk i, tunes
/// on chunk i+1 (mod k) and trains on the rest. With `k == 2` the non-test
/// chunk is halved into dev and train.
pub fn kfold_splits(n: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k * 10 {
        return Err(Error::TooSmall { size: n, k, needed: k * 10 });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunks: Vec<&[usize]> = (0..k).map(|i| &perm[i * n / k..(i + 1) * n / k]).collect();
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    Ok((0..k)
        .map(|i| {
            let next = (i + 1) % k;
            let (dev, train) = if k == 2 {
                let half = chunks[next].len() / 2;
                (sorted(&chunks[next][..half]), sorted(&chunks[next][half..]))
            } else {
                let rest: Vec<usize> = (0..k).filter(|&j| j != i && j != next).flat_map(|j| chunks[j].iter().copied()).collect();
                (sorted(chunks[next]), sorted(&rest))
            };
            FoldSplit {
                fold: i,
                train,
                dev,
                test: sorted(chunks[i]),
            }
        })
        .collect())
}

/// Keeps `round(fraction · n_c)` items of each class (at least one when the
/// class is present), chosen by seeded shuffle. Returned ascending.
pub fn stratified_subsample(indices: &[usize], labels: &[Label], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("subsample fraction must lie in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(indices.to_vec());
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, mut members) in by_class {
        let keep = ((fraction * members.len() as f64).round() as usize).max(1);
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}
