//! Seeded randomness and the two-way sample split used by cross-fitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::EstimationResult;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer over `(master, index)`. Streams derived for distinct
/// indices are independent and individually reproducible.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Balanced random partition of `0..n` into folds 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    assignment: Vec<u8>,
    seed: u64,
}

impl FoldSplit {
    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices (ascending) belonging to `fold`.
    pub fn indices(&self, fold: u8) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| (a == fold).then_some(i))
            .collect()
    }
}

/// Uniformly random balanced split; fold sizes differ by at most one.
pub fn split_folds(n: usize, seed: u64) -> Result<FoldSplit> {
    if n < 4 {
        return Err(Error::SampleTooSmall(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let mut assignment = vec![0u8; n];
    for &i in &perm[n / 2..] {
        assignment[i] = 1;
    }
    Ok(FoldSplit { assignment, seed })
}

/// Estimate and score variance solved on one evaluation fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldFit {
    pub beta: f64,
    pub sigma2: f64,
}

/// Two-fold cross-fitting driver.
///
/// `fit(k, train, eval)` fits nuisances on `train` (the complement of fold
/// `k`) and solves on `eval` (fold `k`). Fold estimates and variances are
/// averaged. Errors carry the fold index.
pub fn cross_fit<F>(data: &Dataset, split_seed: u64, method: &str, fit: F) -> Result<EstimationResult>
where
    F: Fn(usize, &Dataset, &Dataset) -> Result<FoldFit> + Sync,
{
    let split = split_folds(data.n(), split_seed)?;
    let run = |k: u8| -> Result<FoldFit> {
        let eval = data.subset(&split.indices(k));
        let train = data.subset(&split.indices(1 - k));
        fit(k as usize, &train, &eval).map_err(|e| e.in_fold(k as usize))
    };
    let (a, b) = rayon::join(|| run(0), || run(1));
    let (a, b) = (a?, b?);
    EstimationResult::from_folds(vec![a.beta, b.beta], 0.5 * (a.sigma2 + b.sigma2), data.n(), method)
}
