use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FoldId {
    Fold(usize),
    Final,
}

impl fmt::Display for FoldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldId::Fold(k) => write!(f, "{k}"),
            FoldId::Final => write!(f, "final"),
        }
    }
}

impl FromStr for FoldId {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "final" => Ok(FoldId::Final),
            k => k
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(FoldId::Fold)
                .ok_or_else(|| DataError::BadPolicy(format!("unknown fold `{s}`"))),
        }
    }
}

/// Chronological train/val/test ranges over sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub id: FoldId,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Geometry of the progressive split.
///
/// The last `final_fraction` of all samples (rounded down) is held out as the
/// final test set. Fold `k` of `k_folds` uses the first `k/k_folds` of the
/// remaining pool and divides it by `ratio` into train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPolicy {
    pub k_folds: usize,
    pub final_fraction: f64,
    pub ratio: [u32; 3],
}

impl Default for FoldPolicy {
    fn default() -> Self {
        Self {
            k_folds: 5,
            final_fraction: 0.1,
            ratio: [7, 1, 2],
        }
    }
}

pub const MIN_SAMPLES: usize = 50;

/// Splits `total` into parts proportional to `weights` by largest
/// remainders; ties go to the earlier part.
pub fn apportion(total: usize, weights: &[u32]) -> Vec<usize> {
    let wsum: u64 = weights.iter().map(|&w| w as u64).sum();
    assert!(wsum > 0, "weights must not all be zero");
    let mut parts: Vec<usize> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u64, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let num = total as u64 * w as u64;
        parts.push((num / wsum) as usize);
        rems.push((num % wsum, i));
    }
    let mut left = total - parts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

fn split_range(start: usize, len: usize, weights: &[u32]) -> Vec<Range<usize>> {
    let mut at = start;
    apportion(len, weights)
        .into_iter()
        .map(|n| {
            let r = at..at + n;
            at += n;
            r
        })
        .collect()
}

/// Folds `1..=k_folds` followed by the final split.
///
/// The final split trains and validates on the whole pool (divided by the
/// train:val part of `ratio`) and tests on the held-out tail.
pub fn progressive_folds(n_samples: usize, policy: &FoldPolicy) -> Result<Vec<FoldSplit>, DataError> {
    if policy.k_folds == 0
        || !(0.0..1.0).contains(&policy.final_fraction)
        || policy.ratio.iter().any(|&w| w == 0)
    {
        return Err(DataError::BadPolicy(format!("{policy:?}")));
    }
    if n_samples < MIN_SAMPLES {
        return Err(DataError::TooFewSamples {
            samples: n_samples,
            needed: MIN_SAMPLES,
        });
    }
    // the epsilon absorbs representation error in products like 1020 × 0.1
    let n_final = (n_samples as f64 * policy.final_fraction + 1e-9).floor() as usize;
    let pool = n_samples - n_final;
    let mut out = Vec::with_capacity(policy.k_folds + 1);
    for k in 1..=policy.k_folds {
        let len = k * pool / policy.k_folds;
        let parts = split_range(0, len, &policy.ratio);
        out.push(FoldSplit {
            id: FoldId::Fold(k),
            train: parts[0].clone(),
            val: parts[1].clone(),
            test: parts[2].clone(),
        });
    }
    let parts = split_range(0, pool, &policy.ratio[..2]);
    out.push(FoldSplit {
        id: FoldId::Final,
        train: parts[0].clone(),
        val: parts[1].clone(),
        test: pool..n_samples,
    });
    if out
        .iter()
        .any(|f| f.train.is_empty() || f.val.is_empty() || f.test.is_empty())
    {
        return Err(DataError::TooFewSamples {
            samples: n_samples,
            needed: MIN_SAMPLES,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twenty_percent_tail() -> FoldPolicy {
        FoldPolicy {
            final_fraction: 0.2,
            ..FoldPolicy::default()
        }
    }

    /// Independent enumeration of the 7:1:2 boundaries: try every
    /// (train, val) pair and keep the one closest to the exact quotas,
    /// preferring larger train then larger val on ties.
    fn brute_force_split(len: usize) -> (usize, usize, usize) {
        let quota = [len as f64 * 0.7, len as f64 * 0.1, len as f64 * 0.2];
        let mut best = (f64::INFINITY, 0, 0);
        for tr in (0..=len).rev() {
            for va in (0..=len - tr).rev() {
                let te = len - tr - va;
                let err = (tr as f64 - quota[0]).abs()
                    + (va as f64 - quota[1]).abs()
                    + (te as f64 - quota[2]).abs();
                // a part may only round to floor or ceil of its quota
                let ok = [tr, va, te]
                    .iter()
                    .zip(quota)
                    .all(|(&p, q)| p as f64 == q.floor() || p as f64 == q.ceil());
                if ok && err < best.0 - 1e-12 {
                    best = (err, tr, va);
                }
            }
        }
        (best.1, best.2, len - best.1 - best.2)
    }

    #[test]
    fn final_tail_and_fold_five() {
        let folds = progressive_folds(100, &twenty_percent_tail()).unwrap();
        let fin = folds.last().unwrap();
        assert_eq!(fin.id, FoldId::Final);
        // samples 81..=100 in 1-based numbering
        assert_eq!(fin.test, 80..100);
        let f5 = &folds[4];
        assert_eq!(f5.id, FoldId::Fold(5));
        assert_eq!(f5.test, 64..80);
    }

    #[test]
    fn fold_one_rounds_by_largest_remainder() {
        let folds = progressive_folds(100, &twenty_percent_tail()).unwrap();
        let f1 = &folds[0];
        // pool 1..=16: train 1..=11, val 12..=13, test 14..=16
        assert_eq!((f1.train.clone(), f1.val.clone(), f1.test.clone()), (0..11, 11..13, 13..16));
        let (tr, va, te) = brute_force_split(16);
        assert_eq!((f1.train.len(), f1.val.len(), f1.test.len()), (tr, va, te));
    }

    #[test]
    fn apportion_matches_brute_force() {
        for len in 1..200 {
            let parts = apportion(len, &[7, 1, 2]);
            let (tr, va, te) = brute_force_split(len);
            assert_eq!(parts, vec![tr, va, te], "len {len}");
        }
    }

    #[test]
    fn ties_go_to_train() {
        assert_eq!(apportion(1, &[1, 1]), vec![1, 0]);
        assert_eq!(apportion(5, &[1, 1]), vec![3, 2]);
    }

    #[test]
    fn folds_are_ordered_and_precede_final_test() {
        for n in [50, 77, 100, 1027, 994] {
            let folds = progressive_folds(n, &FoldPolicy::default()).unwrap();
            let final_start = folds.last().unwrap().test.start;
            for f in &folds {
                assert_eq!(f.train.start, 0);
                assert_eq!(f.train.end, f.val.start);
                assert_eq!(f.val.end, f.test.start);
                if let FoldId::Fold(_) = f.id {
                    assert!(f.test.end <= final_start);
                }
            }
            for w in folds[..5].windows(2) {
                assert!(w[1].test.start > w[0].test.start);
            }
        }
    }

    #[test]
    fn default_tail_is_ten_percent_rounded_down() {
        let folds = progressive_folds(1027, &FoldPolicy::default()).unwrap();
        assert_eq!(folds.last().unwrap().test.len(), 102);
        let folds = progressive_folds(1020, &FoldPolicy::default()).unwrap();
        assert_eq!(folds.last().unwrap().test.len(), 102);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            progressive_folds(49, &FoldPolicy::default()),
            Err(DataError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn fold_id_parsing() {
        assert_eq!("final".parse::<FoldId>().unwrap(), FoldId::Final);
        assert_eq!("3".parse::<FoldId>().unwrap(), FoldId::Fold(3));
        assert!("0".parse::<FoldId>().is_err());
    }
}
