use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::seeded_rng;

/// `k` disjoint folds of item indices covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(train, test)` indices for fold `i`, both ascending.
    pub fn split(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train: Vec<usize> =
            self.folds.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, f)| f.iter().copied()).collect();
        train.sort_unstable();
        (train, self.folds[i].clone())
    }
}

/// Items sharing a group key, listed in first-appearance order. Items
/// without a key are their own group.
fn grouped(groups: &[Option<String>]) -> Vec<Vec<usize>> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        match g {
            Some(key) => match index.get(key.as_str()) {
                Some(&slot) => out[slot].push(i),
                None => {
                    index.insert(key, out.len());
                    out.push(vec![i]);
                }
            },
            None => out.push(vec![i]),
        }
    }
    out
}

/// Shuffles groups with the seed, then deals each to the currently smallest
/// fold (lowest index on ties). Ungrouped items give folds whose sizes
/// differ by at most one.
pub fn plan_folds(groups: &[Option<String>], k: usize, seed: u64) -> Result<FoldPlan, String> {
    if k < 2 {
        return Err(format!("k must be >= 2, got {k}"));
    }
    let mut units = grouped(groups);
    if k > units.len() {
        return Err(format!("k = {k} exceeds the {} independent items", units.len()));
    }
    units.shuffle(&mut seeded_rng(seed, "folds"));
    let mut folds = vec![Vec::new(); k];
    for unit in units {
        let target = (0..k).min_by_key(|&f| (folds[f].len(), f)).expect("k >= 2");
        folds[target].extend(unit);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { folds })
}

/// `(train, test)` with about `test_fraction` of items in test, whole groups only.
pub fn train_test_split(
    groups: &[Option<String>],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), String> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(format!("test fraction must be in (0, 1), got {test_fraction}"));
    }
    let mut units = grouped(groups);
    units.shuffle(&mut seeded_rng(seed, "split"));
    let target = ((groups.len() as f64) * test_fraction).round().max(1.0) as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for unit in units {
        if test.len() < target {
            test.extend(unit);
        } else {
            train.extend(unit);
        }
    }
    if train.is_empty() {
        return Err("split left no training items".into());
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
