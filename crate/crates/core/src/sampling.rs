//! Weighted sampling from `P_CP` and `P_D^√`, and training-batch assembly.
//!
//! Draws are i.i.d. with replacement. Negatives that happen to be real
//! co-purchases are kept: the negative term of the full objective ranges over
//! every pair, so filtering them would move the optimum.

use rand::distr::Distribution;
use rand_distr::weighted::WeightedAliasIndex;
use thiserror::Error;

use crate::corpus::{CooccurrenceStats, ItemId};
use crate::seed::{rng_from, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("cannot sample from an empty support ({0})")]
    Empty(&'static str),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Alias-table sampler over a fixed support. O(n) to build, O(1) per draw.
///
/// A sampler owns its generator; clone it with a different seed via
/// [`CategoricalSampler::reseeded`] for parallel use.
#[derive(Clone, Debug)]
pub struct CategoricalSampler<T> {
    support: Vec<T>,
    weights: Vec<f64>,
    total: f64,
    alias: WeightedAliasIndex<f64>,
    rng: Rng,
}

impl<T: Copy> CategoricalSampler<T> {
    pub fn new(support: Vec<T>, weights: Vec<f64>, seed: u64) -> Result<Self, SamplingError> {
        if support.len() != weights.len() {
            return Err(SamplingError::InvalidWeights(format!(
                "{} outcomes but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(SamplingError::Empty("no outcomes"));
        }
        let total = weights.iter().sum::<f64>();
        let alias =
            WeightedAliasIndex::new(weights.clone()).map_err(|e| SamplingError::InvalidWeights(e.to_string()))?;
        Ok(CategoricalSampler {
            support,
            weights,
            total,
            alias,
            rng: rng_from(seed),
        })
    }

    pub fn draw(&mut self) -> T {
        self.support[self.alias.sample(&mut self.rng)]
    }

    pub fn draw_n(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| self.draw()).collect()
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Probability of the `i`-th outcome of the support.
    pub fn probability(&self, i: usize) -> f64 {
        self.weights[i] / self.total
    }

    pub fn reseeded(&self, seed: u64) -> Self {
        CategoricalSampler {
            rng: rng_from(seed),
            ..self.clone()
        }
    }
}

pub type PairSampler = CategoricalSampler<(ItemId, ItemId)>;
pub type ItemSampler = CategoricalSampler<ItemId>;

/// Sampler over observed pairs with weight `n_CP(s, r)`.
pub fn build_pair_sampler(stats: &CooccurrenceStats, seed: u64) -> Result<PairSampler, SamplingError> {
    if stats.total_pairs() == 0 {
        return Err(SamplingError::Empty("co-purchase set is empty"));
    }
    let (support, weights): (Vec<_>, Vec<_>) = stats.pairs().map(|(p, c)| (p, c as f64)).unzip();
    CategoricalSampler::new(support, weights, seed)
}

/// Sampler over items with weight `sqrt(n_D(t))`.
pub fn build_item_sampler(stats: &CooccurrenceStats, seed: u64) -> Result<ItemSampler, SamplingError> {
    if stats.total_purchases() == 0 {
        return Err(SamplingError::Empty("purchase set is empty"));
    }
    let support: Vec<ItemId> = stats.items().collect();
    let weights = stats.item_counts().iter().map(|&c| (c as f64).sqrt()).collect();
    CategoricalSampler::new(support, weights, seed)
}

/// Sampled positives (label 1) and negatives (label 0).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingBatch {
    pub positives: Vec<(ItemId, ItemId)>,
    pub negatives: Vec<(ItemId, ItemId)>,
    pub k_cp: usize,
    pub k_s: usize,
    pub k_r: usize,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `k_cp` positives from `P_CP`; `k_s` seeds from `P_D^√`, each paired with
/// `k_r` independent candidates from `P_D^√`.
pub fn sample_mc_batch(
    pairs: &mut PairSampler,
    items: &mut ItemSampler,
    k_cp: usize,
    k_s: usize,
    k_r: usize,
) -> TrainingBatch {
    let positives = pairs.draw_n(k_cp);
    let mut negatives = Vec::with_capacity(k_s * k_r);
    for _ in 0..k_s {
        let s = items.draw();
        for _ in 0..k_r {
            negatives.push((s, items.draw()));
        }
    }
    TrainingBatch {
        positives,
        negatives,
        k_cp,
        k_s,
        k_r,
    }
}

/// `k_cp` positives from `P_CP`; each positive's seed gets `k_r` candidates
/// from `P_D^√`.
pub fn sample_per_seed_batch(
    pairs: &mut PairSampler,
    items: &mut ItemSampler,
    k_cp: usize,
    k_r: usize,
) -> TrainingBatch {
    let positives = pairs.draw_n(k_cp);
    let mut negatives = Vec::with_capacity(k_cp * k_r);
    for &(s, _) in &positives {
        for _ in 0..k_r {
            negatives.push((s, items.draw()));
        }
    }
    TrainingBatch {
        positives,
        negatives,
        k_cp,
        k_s: 0,
        k_r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn stats(items: Vec<u64>, pairs: &[((u32, u32), u64)]) -> CooccurrenceStats {
        let pairs: BTreeMap<_, _> = pairs.iter().map(|&((s, r), c)| ((ItemId(s), ItemId(r)), c)).collect();
        CooccurrenceStats::from_counts(items, pairs)
    }

    #[test]
    fn single_pair_always_drawn() {
        let st = stats(vec![5, 5], &[((0, 1), 5)]);
        let mut s = build_pair_sampler(&st, 1).unwrap();
        assert!(s.draw_n(50).iter().all(|&p| p == (ItemId(0), ItemId(1))));
    }

    #[test]
    fn empty_supports_rejected() {
        let st = stats(vec![0, 0], &[]);
        assert!(build_pair_sampler(&st, 1).is_err());
        assert!(build_item_sampler(&st, 1).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let st = stats(vec![3, 1, 2], &[((0, 1), 3), ((1, 2), 1), ((2, 0), 2)]);
        let a = build_pair_sampler(&st, 42).unwrap().draw_n(100);
        let b = build_pair_sampler(&st, 42).unwrap().draw_n(100);
        assert_eq!(a, b);
        let c = build_pair_sampler(&st, 43).unwrap().draw_n(100);
        assert_ne!(a, c);
    }

    #[test]
    fn item_weights_are_square_roots() {
        let st = stats(vec![4, 1], &[]);
        let s = build_item_sampler(&st, 0).unwrap();
        assert_eq!(s.weights(), &[2.0, 1.0]);
        assert!((s.probability(0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn batch_shapes() {
        let st = stats(vec![4, 1, 2], &[((0, 1), 3), ((1, 2), 1)]);
        let mut p = build_pair_sampler(&st, 1).unwrap();
        let mut i = build_item_sampler(&st, 2).unwrap();

        let b = sample_mc_batch(&mut p, &mut i, 2, 2, 3);
        assert_eq!((b.positives.len(), b.negatives.len()), (2, 6));
        // consecutive k_r negatives share a seed
        assert!(b.negatives[..3].iter().all(|n| n.0 == b.negatives[0].0));

        let b = sample_mc_batch(&mut p, &mut i, 3, 0, 5);
        assert_eq!((b.positives.len(), b.negatives.len()), (3, 0));

        let b = sample_per_seed_batch(&mut p, &mut i, 1, 4);
        assert_eq!(b.negatives.len(), 4);
        assert!(b.negatives.iter().all(|n| n.0 == b.positives[0].0));

        let b = sample_per_seed_batch(&mut p, &mut i, 5, 0);
        assert_eq!((b.positives.len(), b.negatives.len()), (5, 0));
        for &(s, r) in &b.positives {
            assert!(st.n_cp(s, r) > 0);
        }
    }

    #[test]
    fn ratio_0_516_is_realizable() {
        let ratio: f64 = 100_000.0 / (440.0 * 440.0);
        assert!((ratio - 0.5165).abs() < 1e-4);
    }
}
