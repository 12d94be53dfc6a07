use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k` disjoint test folds covering every trial index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub folds: Vec<Vec<usize>>,
}

/// Stratified split: each class is shuffled and dealt round-robin, with the
/// dealer position carried across classes so fold sizes also differ by at
/// most one.
pub fn split_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Split(format!("{k} folds requested; at least 2 are needed")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::Split(format!(
                "class {c} has {} trials, fewer than the {k} folds",
                members.len()
            )));
        }
    }
    if labels.is_empty() {
        return Err(Error::Split("dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut dealer = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            folds[dealer].push(i);
            dealer = (dealer + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldSplit {
        k,
        seed,
        stratified: true,
        folds,
    })
}

/// `(train, test)` index pairs, one per fold, both in ascending order.
pub fn iterate_cv(split: &FoldSplit) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..split.folds.len())
        .map(|f| {
            let mut train: Vec<usize> = split
                .folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect();
            train.sort_unstable();
            (train, split.folds[f].clone())
        })
        .collect()
}
