//! Synthetic feedback, the convergence and sampling-ratio experiments, and a
//! content-driven marketplace stand-in.

use std::collections::BTreeMap;
use std::io::Write;

use log::info;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CatalogRecord, CooccurrenceStats, FeatureSchema, FeatureSetKind, ItemId, PurchaseRecord};
use crate::eval::{rmse, spearman, EvalError};
use crate::nn::{NnError, PairIndicator};
use crate::objective::{mc_shift, ObjectiveError};
use crate::seed::{self, Stream};
use crate::train::{fit, IndicatorModel, LossMode, SimilarityModel, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub p_low: f64,
    pub p_high: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 10_000,
            n_items: 100,
            p_low: 0.2,
            p_high: 0.8,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_items == 0 || self.n_users == 0 {
            return Err(SynthError::Config("need at least one item and one user".into()));
        }
        if !(0.0 <= self.p_low && self.p_low <= self.p_high && self.p_high <= 1.0) {
            return Err(SynthError::Config(format!(
                "need 0 <= p_low <= p_high <= 1, got {} and {}",
                self.p_low, self.p_high
            )));
        }
        Ok(())
    }
}

/// Binary user × item matrix, stored as one bit column per item.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackMatrix {
    pub n_users: usize,
    pub item_probs: Vec<f64>,
    columns: Vec<Vec<u64>>,
}

impl FeedbackMatrix {
    pub fn from_fn(n_users: usize, n_items: usize, mut bit: impl FnMut(usize, usize) -> bool) -> Self {
        let words = n_users.div_ceil(64);
        let mut columns = vec![vec![0u64; words]; n_items];
        for u in 0..n_users {
            for (i, col) in columns.iter_mut().enumerate() {
                if bit(u, i) {
                    col[u / 64] |= 1 << (u % 64);
                }
            }
        }
        FeedbackMatrix {
            n_users,
            item_probs: Vec::new(),
            columns,
        }
    }

    pub fn n_items(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, user: usize, item: usize) -> bool {
        self.columns[item][user / 64] >> (user % 64) & 1 == 1
    }

    pub fn column_sum(&self, item: usize) -> u64 {
        self.columns[item].iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Users who bought both items.
    pub fn intersection(&self, a: usize, b: usize) -> u64 {
        self.columns[a]
            .iter()
            .zip(&self.columns[b])
            .map(|(x, y)| (x & y).count_ones() as u64)
            .sum()
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f64 {
        let ones: u64 = (0..self.n_items()).map(|i| self.column_sum(i)).sum();
        ones as f64 / (self.n_users * self.n_items()).max(1) as f64
    }
}

/// `p_i ~ Uniform(p_low, p_high)` per item, then `r_ui ~ Bernoulli(p_i)`.
pub fn generate_feedback(config: &SyntheticConfig) -> Result<FeedbackMatrix, SynthError> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, Stream::Feedback);
    let probs: Vec<f64> = (0..config.n_items)
        .map(|_| {
            if config.p_low == config.p_high {
                config.p_low
            } else {
                rng.random_range(config.p_low..config.p_high)
            }
        })
        .collect();
    let mut m = FeedbackMatrix::from_fn(config.n_users, config.n_items, |_, i| rng.random::<f64>() < probs[i]);
    m.item_probs = probs;
    Ok(m)
}

/// Column sums as `n_D`, and `n_CP(i, j)` over all ordered pairs `i ≠ j`.
pub fn matrix_to_stats(m: &FeedbackMatrix) -> CooccurrenceStats {
    let n = m.n_items();
    let item_counts: Vec<u64> = (0..n).map(|i| m.column_sum(i)).collect();
    let mut pairs = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let c = m.intersection(i, j);
                if c > 0 {
                    pairs.insert((ItemId(i as u32), ItemId(j as u32)), c);
                }
            }
        }
    }
    CooccurrenceStats::from_counts(item_counts, pairs)
}

/// Indicator feature scheme `(i, j) ↦ i·N + j`.
pub fn indicator_features(n_items: usize) -> Result<PairIndicator, NnError> {
    PairIndicator::new(n_items)
}

/// `|CP| / (N_i² N_u)`: co-purchases per cell of the user × item × item cube.
pub fn pair_density(stats: &CooccurrenceStats, n_users: usize) -> f64 {
    let n = stats.n_items() as f64;
    stats.total_pairs() as f64 / (n * n * n_users as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixSummary {
    pub n_users: usize,
    pub n_items: usize,
    pub density: f64,
    pub pair_density: f64,
    pub total_pairs: u64,
    pub total_purchases: u64,
    pub distinct_pairs: usize,
    pub z: f64,
    pub matched_ratio: f64,
}

pub fn summarize(m: &FeedbackMatrix, stats: &CooccurrenceStats) -> MatrixSummary {
    MatrixSummary {
        n_users: m.n_users,
        n_items: m.n_items(),
        density: m.density(),
        pair_density: pair_density(stats, m.n_users),
        total_pairs: stats.total_pairs(),
        total_purchases: stats.total_purchases(),
        distinct_pairs: stats.n_distinct_pairs(),
        z: stats.z(),
        matched_ratio: stats.matched_ratio(),
    }
}

/// Observed pairs with their log-cosine, in pair order.
pub struct Oracle {
    pub pairs: Vec<(ItemId, ItemId)>,
    pub cosine: Vec<f64>,
    pub log_cosine: Vec<f64>,
}

impl Oracle {
    pub fn new(stats: &CooccurrenceStats) -> Self {
        let pairs: Vec<_> = stats.pairs().map(|(p, _)| p).collect();
        let cosine: Vec<f64> = pairs
            .iter()
            .map(|&(s, r)| stats.cosine(s, r).expect("observed pair has purchases"))
            .collect();
        let log_cosine = cosine.iter().map(|c| c.ln()).collect();
        Oracle {
            pairs,
            cosine,
            log_cosine,
        }
    }

    pub fn scores<M: SimilarityModel>(&self, model: &M) -> Result<Vec<f64>, TrainError> {
        self.pairs.iter().map(|&(s, r)| model.score(s, r)).collect()
    }

    /// `(rmse(exp h, cos), spearman(h, log cos), rmse(h, log cos + shift))`.
    pub fn compare(&self, h: &[f64], shift: f64) -> Result<(f64, f64, f64), EvalError> {
        let exp_h: Vec<f64> = h.iter().map(|v| v.exp()).collect();
        let target: Vec<f64> = self.log_cosine.iter().map(|v| v + shift).collect();
        Ok((
            rmse(&exp_h, &self.cosine)?,
            spearman(h, &self.log_cosine)?,
            rmse(h, &target)?,
        ))
    }

    /// Median of `h - log cos` over observed pairs.
    pub fn median_offset(&self, h: &[f64]) -> f64 {
        let mut d: Vec<f64> = h.iter().zip(&self.log_cosine).map(|(a, b)| a - b).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            d[n / 2]
        } else {
            (d[n / 2 - 1] + d[n / 2]) / 2.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub synthetic: SyntheticConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub full_weight_scale: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            synthetic: SyntheticConfig::default(),
            learning_rate: 0.1,
            epochs: 200,
            full_weight_scale: TrainConfig::default().full_weight_scale,
        }
    }
}

/// Metrics are computed over pairs with `n_CP > 0` only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n_items: usize,
    pub n_users: usize,
    pub n_pairs: usize,
    pub total_pairs: u64,
    pub z: f64,
    pub epochs: usize,
    pub final_rmse: Option<f64>,
    pub final_spearman: Option<f64>,
    /// RMSE of `h` against log-cosine.
    pub final_rmse_log: Option<f64>,
    #[serde(skip)]
    pub history: TrainHistory,
}

/// Full-objective SGD on the indicator linear model.
pub fn run_convergence_experiment(
    config: &ConvergenceConfig,
) -> Result<(IndicatorModel, ConvergenceReport), SynthError> {
    let m = generate_feedback(&config.synthetic)?;
    let stats = matrix_to_stats(&m);
    let oracle = Oracle::new(&stats);
    let train = TrainConfig {
        loss_mode: LossMode::Full,
        learning_rate: config.learning_rate,
        max_epochs: config.epochs,
        patience: 0,
        validation_fraction: 0.0,
        seed: config.synthetic.seed,
        full_weight_scale: config.full_weight_scale,
        ..TrainConfig::default()
    };
    let mut last_log = None;
    let mut monitor = |model: &IndicatorModel| {
        if oracle.pairs.len() < 2 {
            return (None, None);
        }
        let h = oracle.scores(model).expect("indicator covers all pairs");
        match oracle.compare(&h, 0.0) {
            Ok((r, s, rl)) => {
                last_log = Some(rl);
                (Some(r), Some(s))
            }
            Err(_) => (None, None),
        }
    };
    let model = IndicatorModel::zeros(m.n_items().max(1))?;
    let (model, history) = fit(model, &stats, &train, Some(&mut monitor))?;
    let last = history.last();
    let report = ConvergenceReport {
        n_items: m.n_items(),
        n_users: m.n_users,
        n_pairs: oracle.pairs.len(),
        total_pairs: stats.total_pairs(),
        z: stats.z(),
        epochs: history.len(),
        final_rmse: last.and_then(|r| r.rmse),
        final_spearman: last.and_then(|r| r.spearman),
        final_rmse_log: last_log,
        history,
    };
    info!(
        "convergence: rmse {:?} spearman {:?} over {} pairs",
        report.final_rmse, report.final_spearman, report.n_pairs
    );
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioSweepConfig {
    pub synthetic: SyntheticConfig,
    pub k_cp: usize,
    /// Ratios to sweep, as multiples of the matched ratio `|CP| / Z²`.
    pub multipliers: Vec<f64>,
    /// Candidates per sampled seed. When unset, `k_s = k_r`.
    pub k_r: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub spearman_target: f64,
}

impl Default for RatioSweepConfig {
    fn default() -> Self {
        RatioSweepConfig {
            synthetic: SyntheticConfig {
                n_items: 50,
                ..SyntheticConfig::default()
            },
            k_cp: 100_000,
            multipliers: vec![0.1, 0.5, 1.0, 2.0, 10.0],
            k_r: Some(1),
            learning_rate: 0.001,
            epochs: 200,
            spearman_target: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioRun {
    pub multiplier: f64,
    pub k_cp: usize,
    pub k_s: usize,
    pub k_r: usize,
    /// `k_cp / (k_s k_r)` as realized with integer counts.
    pub ratio: f64,
    /// Expected offset of the optimum from log-cosine.
    pub shift: f64,
    /// Median of `h - log cos` after training.
    pub median_offset: f64,
    /// RMSE of `exp h` against cosine (unshifted).
    pub final_rmse: f64,
    /// RMSE of `h` against log-cosine plus `shift`.
    pub final_rmse_shifted: f64,
    pub final_spearman: f64,
    /// First epoch with Spearman at or above the target.
    pub epochs_to_spearman: Option<usize>,
    pub best_rmse: bool,
    #[serde(skip)]
    pub history: TrainHistory,
    #[serde(skip)]
    pub rmse_shifted: Vec<f64>,
}

impl RatioRun {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,rmse,spearman,rmse_shifted";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (r, rs) in self.history.records.iter().zip(&self.rmse_shifted) {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                f(r.val_loss),
                f(r.rmse),
                f(r.spearman),
                rs
            )?;
        }
        Ok(())
    }

    /// File stem naming the run by its multiplier.
    pub fn file_stem(&self) -> String {
        format!("ratio_{}x", self.multiplier)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSweepReport {
    pub matched_ratio: f64,
    pub total_pairs: u64,
    pub z: f64,
    pub runs: Vec<RatioRun>,
}

/// `(k_s, k_r)` with `k_cp / (k_s k_r)` close to `ratio`: `k_s = k_r =
/// round(sqrt(k_cp / ratio))`, or `k_s = round(k_cp / (ratio k_r))` for a
/// fixed `k_r`.
pub fn sample_counts(k_cp: usize, ratio: f64, k_r: Option<usize>) -> (usize, usize) {
    match k_r {
        Some(k_r) => {
            let k_r = k_r.max(1);
            (((k_cp as f64 / (ratio * k_r as f64)).round() as usize).max(1), k_r)
        }
        None => {
            let k = ((k_cp as f64 / ratio).sqrt().round() as usize).max(1);
            (k, k)
        }
    }
}

/// Trains one Monte Carlo run at `multiplier × |CP|/Z²`.
pub fn run_ratio(
    stats: &CooccurrenceStats,
    oracle: &Oracle,
    config: &RatioSweepConfig,
    multiplier: f64,
) -> Result<(IndicatorModel, RatioRun), SynthError> {
    if !(multiplier > 0.0) {
        return Err(SynthError::Config(format!(
            "ratio multiplier must be positive, got {multiplier}"
        )));
    }
    let target = multiplier * stats.matched_ratio();
    let (k_s, k_r) = sample_counts(config.k_cp, target, config.k_r);
    let shift = mc_shift(
        config.k_cp as u64,
        k_s as u64,
        k_r as u64,
        stats.z(),
        stats.total_pairs(),
    )?;
    let train = TrainConfig {
        loss_mode: LossMode::Mc,
        k_cp: config.k_cp,
        k_s,
        k_r,
        learning_rate: config.learning_rate,
        max_epochs: config.epochs,
        patience: 0,
        validation_fraction: 0.0,
        seed: config.synthetic.seed,
        ..TrainConfig::default()
    };
    let mut shifted = Vec::new();
    let mut monitor = |model: &IndicatorModel| {
        let h = oracle.scores(model).expect("indicator covers all pairs");
        match oracle.compare(&h, shift) {
            Ok((r, s, rs)) => {
                shifted.push(rs);
                (Some(r), Some(s))
            }
            Err(_) => {
                shifted.push(f64::NAN);
                (None, None)
            }
        }
    };
    let (model, history) = fit(
        IndicatorModel::zeros(stats.n_items())?,
        stats,
        &train,
        Some(&mut monitor),
    )?;
    let h = oracle.scores(&model)?;
    let (final_rmse, final_spearman, final_rmse_shifted) = oracle.compare(&h, shift)?;
    let epochs_to_spearman = history
        .records
        .iter()
        .find(|r| r.spearman.is_some_and(|s| s >= config.spearman_target))
        .map(|r| r.epoch);
    let run = RatioRun {
        multiplier,
        k_cp: config.k_cp,
        k_s,
        k_r,
        ratio: config.k_cp as f64 / (k_s * k_r) as f64,
        shift,
        median_offset: oracle.median_offset(&h),
        final_rmse,
        final_rmse_shifted,
        final_spearman,
        epochs_to_spearman,
        best_rmse: false,
        history,
        rmse_shifted: shifted,
    };
    info!(
        "ratio {}x: k_s = k_r = {k_s}, shift {shift:.4}, median offset {:.4}, rmse {:.5}, spearman {:.5}",
        multiplier, run.median_offset, run.final_rmse, run.final_spearman
    );
    Ok((model, run))
}

/// One Monte Carlo run per multiplier on a shared synthetic matrix.
pub fn run_ratio_sweep(config: &RatioSweepConfig) -> Result<RatioSweepReport, SynthError> {
    if config.k_cp == 0 {
        return Err(SynthError::Config("k_cp must be positive".into()));
    }
    let m = generate_feedback(&config.synthetic)?;
    let stats = matrix_to_stats(&m);
    if stats.total_pairs() == 0 {
        return Err(SynthError::Config("synthetic matrix has no co-purchases".into()));
    }
    let oracle = Oracle::new(&stats);
    let mut runs = Vec::with_capacity(config.multipliers.len());
    for &mult in &config.multipliers {
        runs.push(run_ratio(&stats, &oracle, config, mult)?.1);
    }
    if let Some(best) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.final_rmse.total_cmp(&b.1.final_rmse))
        .map(|(i, _)| i)
    {
        runs[best].best_rmse = true;
    }
    Ok(RatioSweepReport {
        matched_ratio: stats.matched_ratio(),
        total_pairs: stats.total_pairs(),
        z: stats.z(),
        runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContentCorpusConfig {
    pub n_clusters: usize,
    /// Items per cluster that appear in the training period.
    pub items_per_cluster: usize,
    /// Items per cluster reserved for the test period.
    pub test_items_per_cluster: usize,
    pub subtopics: usize,
    pub n_users: usize,
    /// Purchase weight multiplier for items in the user's cluster; squared
    /// for items in the user's subtopic.
    pub elevation: f64,
    pub min_purchases: usize,
    pub max_purchases: usize,
    pub test_purchases: usize,
    pub seed: u64,
}

impl Default for ContentCorpusConfig {
    fn default() -> Self {
        ContentCorpusConfig {
            n_clusters: 10,
            items_per_cluster: 200,
            test_items_per_cluster: 250,
            subtopics: 4,
            n_users: 5000,
            elevation: 10.0,
            min_purchases: 2,
            max_purchases: 6,
            test_purchases: 2,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContentCorpus {
    pub schema: FeatureSchema,
    pub catalog: Vec<CatalogRecord>,
    /// Training-period purchases over training items.
    pub train: Vec<PurchaseRecord>,
    /// Test-period purchases over test items only.
    pub test: Vec<PurchaseRecord>,
    pub train_items: Vec<String>,
    pub test_items: Vec<String>,
    /// Cluster of each catalog record.
    pub clusters: Vec<usize>,
}

const BRANDS: &[&str] = &[
    "acme", "zenith", "orbit", "nova", "apex", "vertex", "lumen", "crest", "pioneer", "summit", "atlas", "echo",
];
const GENERIC: &[&str] = &[
    "new", "pro", "plus", "classic", "deluxe", "mini", "max", "set", "pack", "edition", "original", "premium",
];
const COLORS: &[&str] = &["black", "white", "red", "blue", "green", "silver", "grey", "gold"];

fn cluster_words(c: usize) -> Vec<String> {
    (0..4).map(|k| format!("k{c}w{k}")).collect()
}

fn subtopic_words(c: usize, t: usize) -> Vec<String> {
    (0..5).map(|k| format!("k{c}s{t}w{k}")).collect()
}

/// Items with cluster-correlated titles and aspects; users who buy mostly
/// within one cluster and subtopic. Test items never appear in training
/// purchases.
pub fn generate_content_corpus(config: &ContentCorpusConfig) -> Result<ContentCorpus, SynthError> {
    let c = config;
    if c.n_clusters == 0 || c.items_per_cluster == 0 || c.subtopics == 0 || c.n_users == 0 {
        return Err(SynthError::Config(
            "cluster, item, subtopic and user counts must be at least 1".into(),
        ));
    }
    if c.min_purchases == 0 || c.min_purchases > c.max_purchases {
        return Err(SynthError::Config("need 1 <= min_purchases <= max_purchases".into()));
    }
    if !(c.elevation >= 1.0) {
        return Err(SynthError::Config("elevation must be at least 1".into()));
    }
    let mut rng = seed::rng(c.seed, Stream::Corpus);
    let schema = FeatureSchema::new([("title", FeatureSetKind::Sequential), ("aspects", FeatureSetKind::Bag)]);

    let mut catalog = Vec::new();
    let mut clusters = Vec::new();
    let mut topics = Vec::new();
    let mut train_items = Vec::new();
    let mut test_items = Vec::new();
    let per_cluster = c.items_per_cluster + c.test_items_per_cluster;
    for split in [false, true] {
        for cl in 0..c.n_clusters {
            let n = if split {
                c.test_items_per_cluster
            } else {
                c.items_per_cluster
            };
            let cwords = cluster_words(cl);
            for k in 0..n {
                let idx = catalog.len();
                let t = rng.random_range(0..c.subtopics);
                // a fifth of items borrow a word from another subtopic
                let t_word = if c.subtopics > 1 && rng.random_bool(0.2) {
                    (t + rng.random_range(1..c.subtopics)) % c.subtopics
                } else {
                    t
                };
                let swords = subtopic_words(cl, t);
                let mut title = vec![BRANDS.choose(&mut rng).unwrap().to_string()];
                title.push(swords.choose(&mut rng).unwrap().clone());
                title.push(subtopic_words(cl, t_word).choose(&mut rng).unwrap().clone());
                title.push(cwords.choose(&mut rng).unwrap().clone());
                if rng.random_bool(0.5) {
                    title.push(GENERIC.choose(&mut rng).unwrap().to_string());
                }
                title.push(format!(
                    "m{:05}",
                    cl * per_cluster + k + if split { c.items_per_cluster } else { 0 }
                ));
                let aspects = vec![
                    format!("cat=k{cl}"),
                    format!("sub=k{cl}s{t}"),
                    format!("color={}", COLORS.choose(&mut rng).unwrap()),
                ];
                let name = format!("item{idx:05}");
                let mut features = BTreeMap::new();
                features.insert("title".to_string(), title);
                features.insert("aspects".to_string(), aspects);
                catalog.push(CatalogRecord {
                    item_id: name.clone(),
                    features,
                });
                clusters.push(cl);
                topics.push(t);
                if split {
                    test_items.push(idx);
                } else {
                    train_items.push(idx);
                }
            }
        }
    }

    let e = c.elevation;
    let weight = |u_cl: usize, u_t: usize, item: usize| {
        if clusters[item] == u_cl && topics[item] == u_t {
            e * e
        } else if clusters[item] == u_cl {
            e
        } else {
            1.0
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    let draw_distinct = |rng: &mut seed::Rng, items: &[usize], weights: &[f64], n: usize| {
        let alias = WeightedAliasIndex::new(weights.to_vec()).expect("positive weights");
        let mut picked: Vec<usize> = Vec::with_capacity(n);
        let n = n.min(items.len());
        while picked.len() < n {
            let it = items[alias.sample(rng)];
            if !picked.contains(&it) {
                picked.push(it);
            }
        }
        picked
    };
    // one weight table per (cluster, subtopic) profile
    let mut tables: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for u in 0..c.n_users {
        let u_cl = rng.random_range(0..c.n_clusters);
        let u_t = rng.random_range(0..c.subtopics);
        let (wtrain, wtest) = tables.entry((u_cl, u_t)).or_insert_with(|| {
            (
                train_items.iter().map(|&i| weight(u_cl, u_t, i)).collect(),
                test_items.iter().map(|&i| weight(u_cl, u_t, i)).collect(),
            )
        });
        let user = format!("user{u:05}");
        let n = rng.random_range(c.min_purchases..=c.max_purchases);
        for (k, it) in draw_distinct(&mut rng, &train_items, wtrain, n).into_iter().enumerate() {
            train.push(PurchaseRecord::new(&user, &catalog[it].item_id, (k + 1) as i64));
        }
        if !test_items.is_empty() && c.test_purchases > 0 {
            for (k, it) in draw_distinct(&mut rng, &test_items, wtest, c.test_purchases)
                .into_iter()
                .enumerate()
            {
                test.push(PurchaseRecord::new(&user, &catalog[it].item_id, (1000 + k) as i64));
            }
        }
    }
    Ok(ContentCorpus {
        schema,
        train_items: train_items.iter().map(|&i| catalog[i].item_id.clone()).collect(),
        test_items: test_items.iter().map(|&i| catalog[i].item_id.clone()).collect(),
        catalog,
        train,
        test,
        clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TransactionLog;
    use proptest::prelude::*;

    #[test]
    fn all_ones_matrix() {
        let cfg = SyntheticConfig {
            n_users: 5,
            n_items: 3,
            p_low: 1.0,
            p_high: 1.0,
            seed: 1,
        };
        let m = generate_feedback(&cfg).unwrap();
        assert_eq!(m.density(), 1.0);
    }

    #[test]
    fn two_by_two_counts() {
        let m = FeedbackMatrix::from_fn(2, 2, |_, _| true);
        let st = matrix_to_stats(&m);
        assert_eq!(st.item_counts(), &[2, 2]);
        assert_eq!(st.n_cp(ItemId(0), ItemId(1)), 2);
        assert_eq!(st.n_cp(ItemId(1), ItemId(0)), 2);
        assert_eq!(st.n_cp(ItemId(0), ItemId(0)), 0);
    }

    #[test]
    fn single_item_has_no_pairs() {
        let m = FeedbackMatrix::from_fn(4, 1, |_, _| true);
        assert_eq!(matrix_to_stats(&m).total_pairs(), 0);
    }

    #[test]
    fn feedback_is_seeded() {
        let cfg = SyntheticConfig {
            n_users: 200,
            n_items: 10,
            ..SyntheticConfig::default()
        };
        assert_eq!(generate_feedback(&cfg).unwrap(), generate_feedback(&cfg).unwrap());
        let other = SyntheticConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_feedback(&cfg).unwrap(), generate_feedback(&other).unwrap());
        assert!(generate_feedback(&SyntheticConfig {
            p_low: 0.9,
            p_high: 0.1,
            ..cfg
        })
        .is_err());
    }

    #[test]
    fn full_size_density() {
        let m = generate_feedback(&SyntheticConfig::default()).unwrap();
        let d = m.density();
        assert!((0.45..=0.55).contains(&d), "{d}");
    }

    #[test]
    fn sample_counts_realize_ratio() {
        assert_eq!(sample_counts(100_000, 0.5165, None), (440, 440));
        assert_eq!(sample_counts(100_000, 0.5, Some(4)), (50_000, 4));
    }

    #[test]
    fn toy_convergence_hits_optimum() {
        let cfg = ConvergenceConfig {
            synthetic: SyntheticConfig {
                n_users: 2,
                n_items: 2,
                p_low: 1.0,
                p_high: 1.0,
                seed: 0,
            },
            epochs: 400,
            ..ConvergenceConfig::default()
        };
        let (model, _) = run_convergence_experiment(&cfg).unwrap();
        for (s, r) in [(0, 1), (1, 0)] {
            let h = model.score(ItemId(s), ItemId(r)).unwrap();
            assert!(h.abs() < 1e-4, "{h}");
        }
    }

    #[test]
    fn content_corpus_structure() {
        let cfg = ContentCorpusConfig {
            n_clusters: 3,
            items_per_cluster: 20,
            test_items_per_cluster: 10,
            n_users: 300,
            ..ContentCorpusConfig::default()
        };
        let a = generate_content_corpus(&cfg).unwrap();
        assert_eq!(a, generate_content_corpus(&cfg).unwrap());
        assert_eq!(a.catalog.len(), 90);
        let test: std::collections::BTreeSet<_> = a.test_items.iter().collect();
        assert!(a.train.iter().all(|p| !test.contains(&p.item)));
        assert!(a.test.iter().all(|p| test.contains(&p.item)));

        // within-cluster co-purchase rate beats cross-cluster
        let log = TransactionLog::ingest(a.train.clone());
        let cluster_of = |id: ItemId| {
            let name = log.item_name(id);
            a.clusters[a.catalog.iter().position(|r| r.item_id == name).unwrap()]
        };
        let within = log
            .copurchases()
            .iter()
            .filter(|&&(s, r)| cluster_of(s) == cluster_of(r))
            .count();
        let n = log.copurchases().len();
        // chance level for 3 equal clusters is 1/3
        assert!(within as f64 / n as f64 > 0.6, "{within}/{n}");
    }

    #[test]
    fn one_cluster_keeps_pairs_inside() {
        let cfg = ContentCorpusConfig {
            n_clusters: 1,
            items_per_cluster: 10,
            test_items_per_cluster: 5,
            n_users: 20,
            ..ContentCorpusConfig::default()
        };
        let a = generate_content_corpus(&cfg).unwrap();
        assert!(a.clusters.iter().all(|&c| c == 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stats_match_brute_force(bits in proptest::collection::vec(any::<bool>(), 1..=200), n_items in 1usize..=10) {
            let n_users = (bits.len() / n_items).clamp(1, 20);
            let get = |u: usize, i: usize| bits[(u * n_items + i) % bits.len()];
            let m = FeedbackMatrix::from_fn(n_users, n_items, get);
            let st = matrix_to_stats(&m);
            for i in 0..n_items {
                let nd = (0..n_users).filter(|&u| get(u, i)).count() as u64;
                prop_assert_eq!(st.n_d(ItemId(i as u32)), nd);
                for j in 0..n_items {
                    let both = (0..n_users).filter(|&u| get(u, i) && get(u, j)).count() as u64;
                    let expect = if i == j { 0 } else { both };
                    prop_assert_eq!(st.n_cp(ItemId(i as u32), ItemId(j as u32)), expect);
                    prop_assert!(st.n_cp(ItemId(i as u32), ItemId(j as u32)) <= nd);
                }
            }
        }
    }
}
