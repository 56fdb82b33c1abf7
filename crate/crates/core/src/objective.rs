//! The log-cosine objective and its closed-form optima.
//!
//! Sign convention: every `*_objective` function returns the expression as
//! written, a weighted sum of log-sigmoid terms that is **maximized** when
//! `h(s, r)` equals the log of the Ochiai coefficient. Training minimizes its
//! negation; [`pair_loss`] and the `loss` columns in reports are that
//! negated quantity.
//!
//! All log-sigmoid evaluations go through [`log_sigmoid`], which stays finite
//! for every finite input.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{CooccurrenceStats, ItemId};
use crate::sampling::TrainingBatch;

/// Default cap on `|I|²` for [`full_objective`].
pub const DEFAULT_FULL_PAIR_CAP: u64 = 100_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("purchase counts must be positive (got n_D(s)={n_d_s}, n_D(r)={n_d_r})")]
    ZeroPurchases { n_d_s: u64, n_d_r: u64 },
    #[error("sample counts must be positive")]
    ZeroSamples,
    #[error("full objective over {pairs} pairs exceeds the cap of {cap}")]
    TooManyPairs { pairs: u64, cap: u64 },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x) = min(x, 0) - log(1 + e^{-|x|})`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// A log-cosine value that may be `-∞` (no co-purchases).
///
/// Ordered with `NegInfinity` below every finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogScore {
    NegInfinity,
    Finite(f64),
}

impl LogScore {
    pub fn finite(self) -> Option<f64> {
        match self {
            LogScore::Finite(v) => Some(v),
            LogScore::NegInfinity => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LogScore::Finite(_))
    }

    /// `exp` of the score; `-∞` maps to 0.
    pub fn exp(self) -> f64 {
        self.finite().map_or(0.0, f64::exp)
    }

    fn shifted(self, by: f64) -> LogScore {
        match self {
            LogScore::Finite(v) => LogScore::Finite(v + by),
            LogScore::NegInfinity => LogScore::NegInfinity,
        }
    }
}

impl PartialOrd for LogScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (LogScore::NegInfinity, LogScore::NegInfinity) => Some(Ordering::Equal),
            (LogScore::NegInfinity, _) => Some(Ordering::Less),
            (_, LogScore::NegInfinity) => Some(Ordering::Greater),
            (LogScore::Finite(a), LogScore::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for LogScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogScore::NegInfinity => f.write_str("-inf"),
            LogScore::Finite(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for LogScore {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LogScore::NegInfinity => s.serialize_str("-inf"),
            LogScore::Finite(v) => s.serialize_f64(*v),
        }
    }
}

/// Weighted binary cross-entropy term: `w⁺ log σ(h) + w⁻ log σ(-h)`.
pub fn weighted_objective(h: f64, positive_weight: f64, negative_weight: f64) -> f64 {
    let mut v = 0.0;
    if positive_weight != 0.0 {
        v += positive_weight * log_sigmoid(h);
    }
    if negative_weight != 0.0 {
        v += negative_weight * log_sigmoid(-h);
    }
    v
}

/// d/dh of [`weighted_objective`]: `w⁺ σ(-h) - w⁻ σ(h)`.
pub fn weighted_objective_gradient(h: f64, positive_weight: f64, negative_weight: f64) -> f64 {
    positive_weight * sigmoid(-h) - negative_weight * sigmoid(h)
}

/// Per-pair objective `n_CP log σ(h) + sqrt(n_D(s)) sqrt(n_D(r)) log σ(-h)`.
pub fn pair_objective(h: f64, n_cp: u64, n_d_s: u64, n_d_r: u64) -> f64 {
    weighted_objective(h, n_cp as f64, negative_weight(n_d_s, n_d_r))
}

/// Negated [`pair_objective`]; minimized at [`optimal_h`].
pub fn pair_loss(h: f64, n_cp: u64, n_d_s: u64, n_d_r: u64) -> f64 {
    -pair_objective(h, n_cp, n_d_s, n_d_r)
}

fn negative_weight(n_d_s: u64, n_d_r: u64) -> f64 {
    (n_d_s as f64).sqrt() * (n_d_r as f64).sqrt()
}

/// Exhaustive objective over a corpus: the positive term over every observed
/// pair and the negative term over every pair of `items × items`.
pub fn full_objective<F>(h: F, stats: &CooccurrenceStats, items: &[ItemId], cap: u64) -> Result<f64, ObjectiveError>
where
    F: Fn(ItemId, ItemId) -> f64,
{
    let n_pairs = (items.len() as u64).saturating_mul(items.len() as u64);
    if n_pairs > cap {
        return Err(ObjectiveError::TooManyPairs { pairs: n_pairs, cap });
    }
    let positive: f64 = stats.pairs().map(|((s, r), c)| c as f64 * log_sigmoid(h(s, r))).sum();
    let mut negative = 0.0;
    for &s in items {
        let ws = (stats.n_d(s) as f64).sqrt();
        if ws == 0.0 {
            continue;
        }
        for &r in items {
            let wr = (stats.n_d(r) as f64).sqrt();
            if wr != 0.0 {
                negative += ws * wr * log_sigmoid(-h(s, r));
            }
        }
    }
    Ok(positive + negative)
}

/// Monte Carlo objective: each sampled term carries weight 1.
pub fn mc_objective<F>(batch: &TrainingBatch, h: F) -> f64
where
    F: Fn(ItemId, ItemId) -> f64,
{
    let pos: f64 = batch.positives.iter().map(|&(s, r)| log_sigmoid(h(s, r))).sum();
    let neg: f64 = batch.negatives.iter().map(|&(s, r)| log_sigmoid(-h(s, r))).sum();
    pos + neg
}

/// Objective value with its gradient with respect to each distinct `h(s, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_wrt_h: Option<BTreeMap<(ItemId, ItemId), f64>>,
}

pub fn mc_objective_with_gradient<F>(batch: &TrainingBatch, h: F) -> LossValue
where
    F: Fn(ItemId, ItemId) -> f64,
{
    let mut value = 0.0;
    let mut grad = BTreeMap::new();
    let labelled = batch
        .positives
        .iter()
        .map(|p| (p, Label::Positive))
        .chain(batch.negatives.iter().map(|p| (p, Label::Negative)));
    for (&(s, r), label) in labelled {
        let hv = h(s, r);
        value += match label {
            Label::Positive => log_sigmoid(hv),
            Label::Negative => log_sigmoid(-hv),
        };
        *grad.entry((s, r)).or_insert(0.0) += objective_gradient(label, hv, 1.0);
    }
    LossValue {
        value,
        grad_wrt_h: Some(grad),
    }
}

/// `log(n_CP / (sqrt(n_D(s)) sqrt(n_D(r))))`, the maximizer of
/// [`pair_objective`].
pub fn optimal_h(n_cp: u64, n_d_s: u64, n_d_r: u64) -> Result<LogScore, ObjectiveError> {
    if n_d_s == 0 || n_d_r == 0 {
        return Err(ObjectiveError::ZeroPurchases { n_d_s, n_d_r });
    }
    if n_cp == 0 {
        return Ok(LogScore::NegInfinity);
    }
    Ok(LogScore::Finite(
        (n_cp as f64).ln() - 0.5 * (n_d_s as f64).ln() - 0.5 * (n_d_r as f64).ln(),
    ))
}

/// Constant offset of the Monte Carlo optimum:
/// `log(k_CP / (k_s k_r)) + log(Z² / |CP|)`.
pub fn mc_shift(k_cp: u64, k_s: u64, k_r: u64, z: f64, total_pairs: u64) -> Result<f64, ObjectiveError> {
    if k_cp == 0 || k_s == 0 || k_r == 0 || total_pairs == 0 || z <= 0.0 {
        return Err(ObjectiveError::ZeroSamples);
    }
    Ok((k_cp as f64).ln() - (k_s as f64).ln() - (k_r as f64).ln() + 2.0 * z.ln() - (total_pairs as f64).ln())
}

/// Maximizer of the Monte Carlo objective: [`optimal_h`] plus [`mc_shift`].
#[allow(clippy::too_many_arguments)]
pub fn mc_optimal_h(
    n_cp: u64,
    n_d_s: u64,
    n_d_r: u64,
    k_cp: u64,
    k_s: u64,
    k_r: u64,
    z: f64,
    total_pairs: u64,
) -> Result<LogScore, ObjectiveError> {
    let base = optimal_h(n_cp, n_d_s, n_d_r)?;
    Ok(base.shifted(mc_shift(k_cp, k_s, k_r, z, total_pairs)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

/// Derivative of one weighted objective term with respect to `h`:
/// `w σ(-h)` for positives, `-w σ(h)` for negatives.
pub fn objective_gradient(label: Label, h: f64, weight: f64) -> f64 {
    match label {
        Label::Positive => weight * sigmoid(-h),
        Label::Negative => -weight * sigmoid(h),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        for x in [-7.5, -1.0, 0.3, 2.0, 15.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn log_sigmoid_stability() {
        assert!((log_sigmoid(0.0) + LN2).abs() < 1e-15);
        let v = log_sigmoid(-1000.0);
        assert!(v.is_finite());
        assert!((v + 1000.0).abs() < 1e-9);
        assert!(log_sigmoid(1000.0) <= 0.0);
        let mut x = -30.0;
        while x <= 30.0 {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12, "x={x}");
            x += 0.25;
        }
    }

    #[test]
    fn pair_objective_at_zero() {
        assert!((pair_objective(0.0, 1, 1, 1) + 2.0 * LN2).abs() < 1e-12);
        assert!((pair_loss(0.0, 1, 1, 1) - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn optimal_h_cases() {
        assert_eq!(optimal_h(4, 4, 4).unwrap(), LogScore::Finite(0.0));
        let v = optimal_h(1, 4, 1).unwrap().finite().unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(optimal_h(0, 3, 3).unwrap(), LogScore::NegInfinity);
        assert!(optimal_h(1, 0, 3).is_err());
    }

    #[test]
    fn sentinel_orders_below_finite() {
        assert!(LogScore::NegInfinity < LogScore::Finite(-1e300));
        assert!(LogScore::Finite(0.0) > LogScore::NegInfinity);
        assert_eq!(LogScore::NegInfinity.exp(), 0.0);
    }

    #[test]
    fn gradient_of_pair_objective_vanishes_at_optimum() {
        for &(c, a, b) in &[(1u64, 4u64, 1u64), (3, 7, 9), (10, 10, 12), (2, 50, 50)] {
            let h = optimal_h(c, a, b).unwrap().finite().unwrap();
            let eps = 1e-6;
            let fd = (pair_objective(h + eps, c, a, b) - pair_objective(h - eps, c, a, b)) / (2.0 * eps);
            assert!(fd.abs() < 1e-9 * (1.0 + c as f64), "fd={fd}");
            let analytic = weighted_objective_gradient(h, c as f64, ((a * b) as f64).sqrt());
            assert!(analytic.abs() < 1e-12);
        }
    }

    #[test]
    fn mc_shift_cancels_at_matched_ratio() {
        // |CP| / Z² = 100 / 400 = k_cp / (k_s k_r) = 25 / 100
        let v = mc_optimal_h(2, 4, 9, 25, 10, 10, 20.0, 100).unwrap();
        let base = optimal_h(2, 4, 9).unwrap();
        assert!((v.finite().unwrap() - base.finite().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn doubling_k_r_lowers_by_log2() {
        let a = mc_optimal_h(2, 4, 9, 100, 10, 5, 30.0, 700).unwrap().finite().unwrap();
        let b = mc_optimal_h(2, 4, 9, 100, 10, 10, 30.0, 700).unwrap().finite().unwrap();
        assert!((a - b - LN2).abs() < 1e-12);
    }

    #[test]
    fn full_size_synthetic_ratio_shift() {
        // |CP|/Z² = 0.516 and a sampling ratio R shift the optimum by log(R / 0.516).
        let z = 1000.0;
        let total_pairs = (0.516 * z * z) as u64;
        let shift = mc_shift(100_000, 440, 440, z, total_pairs).unwrap();
        let ratio = 100_000.0 / (440.0 * 440.0);
        assert!((shift - (ratio / 0.516f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn gradient_signs() {
        assert_eq!(objective_gradient(Label::Positive, 0.0, 1.0), 0.5);
        assert_eq!(objective_gradient(Label::Negative, 0.0, 1.0), -0.5);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let eps = 1e-5;
        for &h in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            for &w in &[0.5, 1.0, 3.0] {
                let fd_pos = w * (log_sigmoid(h + eps) - log_sigmoid(h - eps)) / (2.0 * eps);
                let fd_neg = w * (log_sigmoid(-(h + eps)) - log_sigmoid(-(h - eps))) / (2.0 * eps);
                assert!((objective_gradient(Label::Positive, h, w) - fd_pos).abs() < 1e-8);
                assert!((objective_gradient(Label::Negative, h, w) - fd_neg).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mc_objective_small_batches() {
        let p = (ItemId(0), ItemId(1));
        let mut batch = TrainingBatch {
            positives: vec![p],
            ..Default::default()
        };
        assert!((mc_objective(&batch, |_, _| 0.0) + LN2).abs() < 1e-15);
        batch.negatives.push((ItemId(1), ItemId(0)));
        assert!((mc_objective(&batch, |_, _| 0.0) + 2.0 * LN2).abs() < 1e-15);
        let lv = mc_objective_with_gradient(&batch, |_, _| 0.0);
        assert_eq!(lv.grad_wrt_h.unwrap()[&p], 0.5);
    }

    #[test]
    fn full_objective_cap() {
        let stats = CooccurrenceStats::from_counts(vec![1; 4], Default::default());
        let items: Vec<_> = stats.items().collect();
        assert!(matches!(
            full_objective(|_, _| 0.0, &stats, &items, 15),
            Err(ObjectiveError::TooManyPairs { pairs: 16, cap: 15 })
        ));
        // empty CP: only the negative term, Z² log σ(0)
        let v = full_objective(|_, _| 0.0, &stats, &items, 16).unwrap();
        assert!((v + 16.0 * LN2).abs() < 1e-12);
    }
}
