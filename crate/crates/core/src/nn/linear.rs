//! Linear scorers `h(s, r) = θ · x_sr` over sparse binary features.

use super::NnError;
use crate::corpus::ItemFeatures;

/// `θ` over a binary feature space. A pair's score is the sum of `θ` over
/// its active feature ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub theta: Vec<f64>,
}

impl LinearModel {
    /// `θ = 0`: every pair scores 0.
    pub fn zeros(dim: usize) -> Self {
        LinearModel { theta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn score(&self, active: &[u32]) -> f64 {
        active.iter().map(|&k| self.theta[k as usize]).sum()
    }

    /// `θ += alpha · x`. The gradient of the score is the indicator itself.
    pub fn add_scaled(&mut self, active: &[u32], alpha: f64) {
        for &k in active {
            self.theta[k as usize] += alpha;
        }
    }

    pub fn param_norm(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One indicator per ordered pair: `(i, j) ↦ i·N + j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndicator {
    pub n_items: usize,
}

impl PairIndicator {
    pub fn new(n_items: usize) -> Result<Self, NnError> {
        if n_items == 0 {
            return Err(NnError::Config("indicator features need at least one item".into()));
        }
        if (n_items as u64).pow(2) > u32::MAX as u64 {
            return Err(NnError::Config(format!("{n_items}² indicator features overflow u32")));
        }
        Ok(PairIndicator { n_items })
    }

    pub fn dim(&self) -> usize {
        self.n_items * self.n_items
    }

    pub fn index(&self, i: usize, j: usize) -> Result<u32, NnError> {
        if i >= self.n_items || j >= self.n_items {
            return Err(NnError::IndexOutOfRange {
                index: i.max(j),
                len: self.n_items,
            });
        }
        Ok((i * self.n_items + j) as u32)
    }
}

/// Content features for the linear baseline: seed tokens, candidate tokens,
/// and hashed (seed token, candidate token) crosses within each feature set.
/// Without the cross block the score would split into a seed term and a
/// candidate term, and every seed would get the same ranking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentIndicator {
    pub vocab_sizes: Vec<usize>,
    pub cross_buckets: usize,
}

impl ContentIndicator {
    pub fn new(vocab_sizes: Vec<usize>, cross_buckets: usize) -> Result<Self, NnError> {
        let f = ContentIndicator {
            vocab_sizes,
            cross_buckets,
        };
        if f.dim() > u32::MAX as usize {
            return Err(NnError::Config("content feature space overflows u32".into()));
        }
        Ok(f)
    }

    fn block(&self) -> usize {
        self.vocab_sizes.iter().sum()
    }

    pub fn dim(&self) -> usize {
        2 * self.block() + self.cross_buckets
    }

    /// Sorted, deduplicated active feature ids of the pair.
    pub fn active(&self, s: &ItemFeatures, r: &ItemFeatures) -> Result<Vec<u32>, NnError> {
        self.check(s)?;
        self.check(r)?;
        let block = self.block();
        let mut out = Vec::new();
        let mut offset = 0;
        for (set, vocab) in self.vocab_sizes.iter().enumerate() {
            for &a in &s.sets[set] {
                out.push((offset + a as usize) as u32);
            }
            for &b in &r.sets[set] {
                out.push((block + offset + b as usize) as u32);
            }
            if self.cross_buckets > 0 {
                for &a in &s.sets[set] {
                    for &b in &r.sets[set] {
                        let h = mix(((set as u64) << 48) ^ ((a as u64) << 24) ^ b as u64);
                        out.push((2 * block + (h % self.cross_buckets as u64) as usize) as u32);
                    }
                }
            }
            offset += vocab;
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn check(&self, f: &ItemFeatures) -> Result<(), NnError> {
        if f.sets.len() != self.vocab_sizes.len() {
            return Err(NnError::Config(format!(
                "item has {} feature sets, model expects {}",
                f.sets.len(),
                self.vocab_sizes.len()
            )));
        }
        for (set, (ids, &vocab)) in f.sets.iter().zip(&self.vocab_sizes).enumerate() {
            if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
                return Err(NnError::TokenOutOfRange { set, token: bad, vocab });
            }
        }
        Ok(())
    }
}

// splitmix64 finalizer
fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_positions() {
        let f = PairIndicator::new(100).unwrap();
        assert_eq!(f.index(2, 3).unwrap(), 203);
        assert_eq!(f.index(0, 0).unwrap(), 0);
        assert!(f.index(100, 0).is_err());
        let g = PairIndicator::new(7).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..7 {
            for j in 0..7 {
                assert!(seen.insert(g.index(i, j).unwrap()));
            }
        }
        assert_eq!(seen.len(), g.dim());
    }

    #[test]
    fn zero_theta_scores_zero() {
        let m = LinearModel::zeros(10);
        assert_eq!(m.score(&[1, 3, 9]), 0.0);
    }

    #[test]
    fn content_features_deduplicated_and_in_range() {
        let f = ContentIndicator::new(vec![5, 3], 16).unwrap();
        let s = ItemFeatures::new(vec![vec![1, 2, 2], vec![1]]);
        let r = ItemFeatures::new(vec![vec![4], vec![]]);
        let a = f.active(&s, &r).unwrap();
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&k| (k as usize) < f.dim()));
        assert!(f.active(&s, &ItemFeatures::new(vec![vec![5], vec![]])).is_err());
    }
}
