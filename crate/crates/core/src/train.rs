//! Plain SGD on the negated objective, with early stopping.
//!
//! Every update is `θ ← θ + lr · g · ∂h/∂θ` where `g` is the derivative of
//! the objective term with respect to `h`, i.e. gradient descent on the loss.

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CooccurrenceStats, CorpusError, ItemCatalog, ItemFeatures, ItemId, TransactionLog};
use crate::nn::{init_model, ContentGrad, ContentModel, LinearModel, ModelSpec, NnError, PairIndicator};
use crate::objective::{log_sigmoid, weighted_objective, weighted_objective_gradient};
use crate::sampling::{
    build_item_sampler, build_pair_sampler, sample_mc_batch, sample_per_seed_batch, CategoricalSampler, ItemSampler,
    PairSampler, SamplingError,
};
use crate::seed::{self, Rng, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(
        "non-finite value in epoch {epoch} at example ({s}, {r}): h = {h}, loss = {loss}, parameter norm = {param_norm}"
    )]
    NonFinite {
        epoch: usize,
        s: ItemId,
        r: ItemId,
        h: f64,
        loss: f64,
        param_norm: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Every item pair once per epoch, weighted by its counts.
    Full,
    /// `k_cp` positives, `k_s × k_r` independent negatives per epoch.
    Mc,
    /// `k_cp` positives, `k_r` negatives per positive's seed.
    PerSeed,
}

impl std::str::FromStr for LossMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(LossMode::Full),
            "mc" => Ok(LossMode::Mc),
            "per_seed" | "per-seed" => Ok(LossMode::PerSeed),
            other => Err(TrainError::Config(format!(
                "unknown loss mode {other:?} (expected full, mc or per_seed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub k_cp: usize,
    pub k_s: usize,
    pub k_r: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Fraction of distinct co-purchase pairs held out for validation.
    pub validation_fraction: f64,
    /// Upper bound on validation positives.
    pub validation_size: usize,
    pub batch_size: usize,
    /// Full mode: weights are scaled so the largest per-pair total
    /// `n_CP + sqrt(n_D(s) n_D(r))` becomes this value.
    pub full_weight_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_mode: LossMode::PerSeed,
            k_cp: 200_000,
            k_s: 440,
            k_r: 4,
            learning_rate: 0.1,
            max_epochs: 1000,
            patience: 10,
            min_delta: 1e-5,
            seed: 0,
            validation_fraction: 0.05,
            validation_size: 20_000,
            batch_size: 1,
            full_weight_scale: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        match self.loss_mode {
            LossMode::Full if !(self.full_weight_scale > 0.0) => bad("full_weight_scale must be positive"),
            LossMode::Mc if self.k_cp == 0 || self.k_s == 0 || self.k_r == 0 => {
                bad("mc mode needs positive k_cp, k_s and k_r")
            }
            LossMode::PerSeed if self.k_cp == 0 || self.k_r == 0 => bad("per_seed mode needs positive k_cp and k_r"),
            _ => Ok(()),
        }
    }
}

/// A trainable scorer `h(s, r)` over item ids.
pub trait SimilarityModel: Clone {
    type Grad;

    fn score(&self, s: ItemId, r: ItemId) -> Result<f64, TrainError>;
    fn zero_grad(&self) -> Self::Grad;
    /// `grad += upstream · ∂h(s, r)/∂θ`; returns `h(s, r)`.
    fn accumulate(&self, s: ItemId, r: ItemId, upstream: f64, grad: &mut Self::Grad) -> Result<f64, TrainError>;
    /// `θ += alpha · grad`.
    fn apply(&mut self, grad: &Self::Grad, alpha: f64);
    fn param_norm(&self) -> f64;

    /// Single-example update `θ += coef(h) · ∂h/∂θ` where `coef` sees the
    /// score before the update. Returns that score.
    fn step<F: FnOnce(f64) -> f64>(&mut self, s: ItemId, r: ItemId, coef: F) -> Result<f64, TrainError> {
        let h = self.score(s, r)?;
        let mut g = self.zero_grad();
        self.accumulate(s, r, 1.0, &mut g)?;
        self.apply(&g, coef(h));
        Ok(h)
    }
}

/// Linear model over one indicator per ordered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorModel {
    pub linear: LinearModel,
    pub features: PairIndicator,
}

impl IndicatorModel {
    pub fn zeros(n_items: usize) -> Result<Self, TrainError> {
        let features = PairIndicator::new(n_items)?;
        Ok(IndicatorModel {
            linear: LinearModel::zeros(features.dim()),
            features,
        })
    }

    fn k(&self, s: ItemId, r: ItemId) -> Result<usize, TrainError> {
        Ok(self.features.index(s.index(), r.index())? as usize)
    }
}

impl SimilarityModel for IndicatorModel {
    type Grad = Vec<(usize, f64)>;

    fn score(&self, s: ItemId, r: ItemId) -> Result<f64, TrainError> {
        Ok(self.linear.theta[self.k(s, r)?])
    }

    fn zero_grad(&self) -> Self::Grad {
        Vec::new()
    }

    fn accumulate(&self, s: ItemId, r: ItemId, upstream: f64, grad: &mut Self::Grad) -> Result<f64, TrainError> {
        let k = self.k(s, r)?;
        grad.push((k, upstream));
        Ok(self.linear.theta[k])
    }

    fn apply(&mut self, grad: &Self::Grad, alpha: f64) {
        for &(k, v) in grad {
            self.linear.theta[k] += alpha * v;
        }
    }

    fn param_norm(&self) -> f64 {
        self.linear.param_norm()
    }

    fn step<F: FnOnce(f64) -> f64>(&mut self, s: ItemId, r: ItemId, coef: F) -> Result<f64, TrainError> {
        let k = self.k(s, r)?;
        let h = self.linear.theta[k];
        self.linear.theta[k] += coef(h);
        Ok(h)
    }
}

/// A content model bound to the features of the training items.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentScorer<'a> {
    pub model: ContentModel,
    pub features: &'a [ItemFeatures],
}

impl<'a> ContentScorer<'a> {
    fn item(&self, t: ItemId) -> Result<&'a ItemFeatures, TrainError> {
        self.features.get(t.index()).ok_or_else(|| {
            TrainError::Model(NnError::IndexOutOfRange {
                index: t.index(),
                len: self.features.len(),
            })
        })
    }
}

impl SimilarityModel for ContentScorer<'_> {
    type Grad = ContentGrad;

    fn score(&self, s: ItemId, r: ItemId) -> Result<f64, TrainError> {
        Ok(self.model.score(self.item(s)?, self.item(r)?)?)
    }

    fn zero_grad(&self) -> Self::Grad {
        self.model.zero_grad()
    }

    fn accumulate(&self, s: ItemId, r: ItemId, upstream: f64, grad: &mut Self::Grad) -> Result<f64, TrainError> {
        Ok(self.model.accumulate(self.item(s)?, self.item(r)?, upstream, grad)?)
    }

    fn apply(&mut self, grad: &Self::Grad, alpha: f64) {
        self.model.apply(grad, alpha);
    }

    fn param_norm(&self) -> f64 {
        self.model.param_norm()
    }

    fn step<F: FnOnce(f64) -> f64>(&mut self, s: ItemId, r: ItemId, coef: F) -> Result<f64, TrainError> {
        let (fs, fr) = (self.item(s)?, self.item(r)?);
        Ok(self.model.step(fs, fr, coef)?)
    }
}

/// One weighted objective term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub s: ItemId,
    pub r: ItemId,
    pub positive_weight: f64,
    pub negative_weight: f64,
}

impl Example {
    pub fn positive(s: ItemId, r: ItemId) -> Self {
        Example {
            s,
            r,
            positive_weight: 1.0,
            negative_weight: 0.0,
        }
    }

    pub fn negative(s: ItemId, r: ItemId) -> Self {
        Example {
            s,
            r,
            positive_weight: 0.0,
            negative_weight: 1.0,
        }
    }

    pub fn loss(&self, h: f64) -> f64 {
        -weighted_objective(h, self.positive_weight, self.negative_weight)
    }

    fn weight(&self) -> f64 {
        self.positive_weight + self.negative_weight
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per unit weight, each term evaluated just before its update.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub rmse: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initial parameters).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,rmse,spearman";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                opt(r.val_loss),
                opt(r.rmse),
                opt(r.spearman)
            )?;
        }
        Ok(())
    }
}

/// Per-epoch `(rmse, spearman)` against an oracle, computed by the caller.
pub type Monitor<'m, M> = &'m mut dyn FnMut(&M) -> (Option<f64>, Option<f64>);

/// Sampling state and validation data for one training run.
pub struct Trainer<'d> {
    config: TrainConfig,
    stats: &'d CooccurrenceStats,
    train_stats: Option<CooccurrenceStats>,
    pairs: Option<PairSampler>,
    items: Option<ItemSampler>,
    shuffle: Rng,
    validation: Vec<Example>,
    full_scale: f64,
    epoch: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(stats: &'d CooccurrenceStats, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut trainer = Trainer {
            shuffle: seed::rng(config.seed, Stream::Shuffle),
            config,
            stats,
            train_stats: None,
            pairs: None,
            items: None,
            validation: Vec::new(),
            full_scale: 1.0,
            epoch: 0,
        };
        match trainer.config.loss_mode {
            LossMode::Full => {
                let max_w = max_pair_weight(stats);
                if max_w > 0.0 {
                    trainer.full_scale = trainer.config.full_weight_scale / max_w;
                }
            }
            LossMode::Mc | LossMode::PerSeed => trainer.prepare_sampling()?,
        }
        Ok(trainer)
    }

    fn prepare_sampling(&mut self) -> Result<(), TrainError> {
        let cfg = &self.config;
        let mut held_out = Vec::new();
        if cfg.validation_fraction > 0.0 {
            let mut distinct: Vec<(ItemId, ItemId)> = self.stats.pairs().map(|(p, _)| p).collect();
            let mut rng = seed::rng(cfg.seed, Stream::Validation);
            distinct.shuffle(&mut rng);
            let n = ((distinct.len() as f64) * cfg.validation_fraction).round() as usize;
            held_out = distinct[..n.min(distinct.len())].to_vec();
            held_out.sort();
        }
        let train_stats = self.stats.without_pairs(&held_out);
        let pairs = build_pair_sampler(&train_stats, seed::stream_seed(cfg.seed, Stream::PairSampler))?;
        let items = build_item_sampler(&train_stats, seed::stream_seed(cfg.seed, Stream::ItemSampler))?;

        if !held_out.is_empty() {
            let weights: Vec<f64> = held_out.iter().map(|&(s, r)| self.stats.n_cp(s, r) as f64).collect();
            let vseed = seed::stream_seed(cfg.seed, Stream::Validation);
            let mut vpairs = CategoricalSampler::new(held_out, weights, vseed)?;
            let mut vitems = items.reseeded(vseed.wrapping_add(1));
            let n_pos = cfg.validation_size.max(1);
            let (positives, negatives) = match cfg.loss_mode {
                LossMode::PerSeed => {
                    let b = sample_per_seed_batch(&mut vpairs, &mut vitems, n_pos, cfg.k_r);
                    (b.positives, b.negatives)
                }
                _ => {
                    // keep the training ratio of negatives to positives
                    let n_neg = (n_pos as f64 * (cfg.k_s * cfg.k_r) as f64 / cfg.k_cp as f64).round() as usize;
                    let negatives = (0..n_neg.max(1)).map(|_| (vitems.draw(), vitems.draw())).collect();
                    (vpairs.draw_n(n_pos), negatives)
                }
            };
            self.validation = labelled(&positives, &negatives);
        }
        self.train_stats = Some(train_stats);
        self.pairs = Some(pairs);
        self.items = Some(items);
        Ok(())
    }

    /// Statistics the model is trained on (validation pairs removed).
    pub fn train_stats(&self) -> &CooccurrenceStats {
        self.train_stats.as_ref().unwrap_or(self.stats)
    }

    pub fn has_validation(&self) -> bool {
        !self.validation.is_empty()
    }

    pub fn validation(&self) -> &[Example] {
        &self.validation
    }

    /// Weight scale applied in full mode.
    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    /// The examples of the next epoch, in update order.
    pub fn next_examples(&mut self) -> Vec<Example> {
        let cfg = &self.config;
        let mut ex = match cfg.loss_mode {
            LossMode::Full => {
                let stats = self.stats;
                let c = self.full_scale;
                let mut v = Vec::with_capacity(stats.n_items() * stats.n_items());
                for s in stats.items() {
                    let ws = (stats.n_d(s) as f64).sqrt();
                    for r in stats.items() {
                        let neg = ws * (stats.n_d(r) as f64).sqrt();
                        let pos = stats.n_cp(s, r) as f64;
                        if pos + neg > 0.0 {
                            v.push(Example {
                                s,
                                r,
                                positive_weight: c * pos,
                                negative_weight: c * neg,
                            });
                        }
                    }
                }
                v
            }
            LossMode::Mc => {
                let (p, i) = (self.pairs.as_mut().unwrap(), self.items.as_mut().unwrap());
                let b = sample_mc_batch(p, i, cfg.k_cp, cfg.k_s, cfg.k_r);
                labelled(&b.positives, &b.negatives)
            }
            LossMode::PerSeed => {
                let (p, i) = (self.pairs.as_mut().unwrap(), self.items.as_mut().unwrap());
                let b = sample_per_seed_batch(p, i, cfg.k_cp, cfg.k_r);
                labelled(&b.positives, &b.negatives)
            }
        };
        ex.shuffle(&mut self.shuffle);
        ex
    }
}

fn labelled(positives: &[(ItemId, ItemId)], negatives: &[(ItemId, ItemId)]) -> Vec<Example> {
    positives
        .iter()
        .map(|&(s, r)| Example::positive(s, r))
        .chain(negatives.iter().map(|&(s, r)| Example::negative(s, r)))
        .collect()
}

fn max_pair_weight(stats: &CooccurrenceStats) -> f64 {
    let max_d = stats.item_counts().iter().copied().max().unwrap_or(0) as f64;
    let max_cp = stats.pairs().map(|(_, c)| c).max().unwrap_or(0) as f64;
    // n_CP ≤ min(n_D) so this bounds every pair's total
    max_cp + max_d
}

/// Mean loss per unit weight over `examples`.
pub fn mean_loss<M: SimilarityModel>(model: &M, examples: &[Example]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for e in examples {
        total += e.loss(model.score(e.s, e.r)?);
        weight += e.weight();
    }
    Ok(if weight > 0.0 { total / weight } else { 0.0 })
}

/// One pass of SGD over a fresh set of examples. Returns the mean training
/// loss per unit weight.
pub fn train_epoch<M: SimilarityModel>(model: &mut M, trainer: &mut Trainer<'_>) -> Result<f64, TrainError> {
    trainer.epoch += 1;
    let epoch = trainer.epoch;
    let examples = trainer.next_examples();
    let lr = trainer.config.learning_rate;
    let mut total = 0.0;
    let mut weight = 0.0;

    let check = |model: &M, e: &Example, h: f64, loss: f64| {
        if h.is_finite() && loss.is_finite() {
            Ok(())
        } else {
            Err(TrainError::NonFinite {
                epoch,
                s: e.s,
                r: e.r,
                h,
                loss,
                param_norm: model.param_norm(),
            })
        }
    };

    if trainer.config.batch_size == 1 {
        for e in &examples {
            let h = model.step(e.s, e.r, |h| {
                lr * weighted_objective_gradient(h, e.positive_weight, e.negative_weight)
            })?;
            let loss = e.loss(h);
            check(model, e, h, loss)?;
            total += loss;
            weight += e.weight();
        }
    } else {
        let b = trainer.config.batch_size;
        for chunk in examples.chunks(b) {
            let mut grad = model.zero_grad();
            for e in chunk {
                let h = model.score(e.s, e.r)?;
                let loss = e.loss(h);
                check(model, e, h, loss)?;
                let g = weighted_objective_gradient(h, e.positive_weight, e.negative_weight);
                model.accumulate(e.s, e.r, g, &mut grad)?;
                total += loss;
                weight += e.weight();
            }
            model.apply(&grad, lr / chunk.len() as f64);
        }
    }
    let mean = if weight > 0.0 { total / weight } else { 0.0 };
    debug!("epoch {epoch}: {} examples, train loss {mean}", examples.len());
    Ok(mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Improved,
    NotImproved,
    Stop,
}

/// Patience counter on a loss that should decrease.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl EarlyStopping {
    /// `patience = 0` never stops.
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> Observation {
        let improved = match self.best {
            None => true,
            Some(b) => loss < b - self.min_delta,
        };
        if improved {
            self.best = Some(loss);
            self.bad_epochs = 0;
            return Observation::Improved;
        }
        self.bad_epochs += 1;
        if self.patience > 0 && self.bad_epochs >= self.patience {
            Observation::Stop
        } else {
            Observation::NotImproved
        }
    }
}

/// Trains for up to `max_epochs`. With a validation split and `patience > 0`,
/// stops after `patience` consecutive epochs whose validation loss does not
/// beat the best by more than `min_delta`, and returns the best parameters.
pub fn fit<M: SimilarityModel>(
    model: M,
    stats: &CooccurrenceStats,
    config: &TrainConfig,
    mut monitor: Option<Monitor<'_, M>>,
) -> Result<(M, TrainHistory), TrainError> {
    let mut trainer = Trainer::new(stats, config.clone())?;
    let mut history = TrainHistory::default();
    let mut model = model;
    let mut best: Option<M> = None;
    let mut stopping = EarlyStopping::new(config.patience, config.min_delta);

    for epoch in 1..=config.max_epochs {
        let train_loss = train_epoch(&mut model, &mut trainer)?;
        let val_loss = if trainer.has_validation() {
            Some(mean_loss(&model, trainer.validation())?)
        } else {
            None
        };
        let (rmse, spearman) = match monitor.as_mut() {
            Some(f) => f(&model),
            None => (None, None),
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            rmse,
            spearman,
        });
        info!(
            "epoch {epoch}: train {train_loss:.6} val {} rmse {} spearman {}",
            opt(val_loss),
            opt(rmse),
            opt(spearman)
        );

        match val_loss.map(|v| stopping.observe(v)) {
            None => history.best_epoch = epoch,
            Some(Observation::Improved) => {
                best = Some(model.clone());
                history.best_epoch = epoch;
            }
            Some(Observation::NotImproved) => {}
            Some(Observation::Stop) => {
                history.stopped_early = true;
                info!("early stop after epoch {epoch}; best epoch {}", history.best_epoch);
                break;
            }
        }
    }
    if let Some(m) = best {
        model = m;
    }
    Ok((model, history))
}

/// Fits a fresh content model to a log whose items all appear in `catalog`.
pub fn train_content(
    catalog: &ItemCatalog,
    log: &TransactionLog,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<(ContentModel, TrainHistory), TrainError> {
    let features = catalog.features_for_log(log)?;
    let stats = log.stats();
    let model = init_model(spec, catalog.schema(), &catalog.vocab_sizes(), config.seed)?;
    info!(
        "training {} on {} items, {} co-purchases",
        spec.arch,
        stats.n_items(),
        stats.total_pairs()
    );
    let scorer = ContentScorer {
        model,
        features: &features,
    };
    let (scorer, history) = fit(scorer, &stats, config, None)?;
    Ok((scorer.model, history))
}

/// `-log σ(h)` or `-log σ(-h)`; exposed for hand-checking single updates.
pub fn example_loss(h: f64, positive: bool) -> f64 {
    if positive {
        -log_sigmoid(h)
    } else {
        -log_sigmoid(-h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::sigmoid;
    use std::collections::BTreeMap;

    fn toy() -> CooccurrenceStats {
        // two users both bought items 0 and 1; ordered pairs both ways
        let mut pairs = BTreeMap::new();
        pairs.insert((ItemId(0), ItemId(1)), 2);
        pairs.insert((ItemId(1), ItemId(0)), 2);
        CooccurrenceStats::from_counts(vec![2, 2], pairs)
    }

    fn cfg(mode: LossMode) -> TrainConfig {
        TrainConfig {
            loss_mode: mode,
            k_cp: 50,
            k_s: 5,
            k_r: 10,
            learning_rate: 0.1,
            max_epochs: 5,
            patience: 0,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let st = toy();
        let m0 = IndicatorModel::zeros(2).unwrap();
        let c = TrainConfig {
            learning_rate: 0.0,
            ..cfg(LossMode::Mc)
        };
        let (m, h) = fit(m0.clone(), &st, &c, None).unwrap();
        assert_eq!(m, m0);
        assert_eq!(h.len(), 5);
        assert!((h.records[0].train_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn max_epochs_zero() {
        let st = toy();
        let m0 = IndicatorModel::zeros(2).unwrap();
        let (m, h) = fit(
            m0.clone(),
            &st,
            &TrainConfig {
                max_epochs: 0,
                ..cfg(LossMode::Full)
            },
            None,
        )
        .unwrap();
        assert_eq!(m, m0);
        assert!(h.is_empty());
    }

    #[test]
    fn single_step_matches_hand_gradient() {
        let mut m = IndicatorModel::zeros(3).unwrap();
        m.linear.theta[5] = 0.3; // (1, 2)
        let lr = 0.25;
        m.step(ItemId(1), ItemId(2), |h| lr * weighted_objective_gradient(h, 1.0, 0.0))
            .unwrap();
        let expect = 0.3 + lr * sigmoid(-0.3);
        assert!((m.linear.theta[5] - expect).abs() < 1e-15);
        m.step(ItemId(1), ItemId(2), |h| lr * weighted_objective_gradient(h, 0.0, 1.0))
            .unwrap();
        assert!((m.linear.theta[5] - (expect - lr * sigmoid(expect))).abs() < 1e-15);
        assert_eq!(m.linear.theta.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn full_mode_converges_on_toy() {
        let st = toy();
        let c = TrainConfig {
            max_epochs: 400,
            ..cfg(LossMode::Full)
        };
        let (m, h) = fit(IndicatorModel::zeros(2).unwrap(), &st, &c, None).unwrap();
        // cos = 2 / (sqrt 2 sqrt 2) = 1
        assert!(m.score(ItemId(0), ItemId(1)).unwrap().abs() < 1e-4);
        assert!(m.score(ItemId(1), ItemId(0)).unwrap().abs() < 1e-4);
        let losses: Vec<f64> = h.records.iter().map(|r| r.train_loss).collect();
        assert!(losses.windows(2).skip(5).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn deterministic_runs() {
        let st = toy();
        let a = fit(IndicatorModel::zeros(2).unwrap(), &st, &cfg(LossMode::PerSeed), None).unwrap();
        let b = fit(IndicatorModel::zeros(2).unwrap(), &st, &cfg(LossMode::PerSeed), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minibatches_stay_finite() {
        let st = toy();
        let c1 = cfg(LossMode::Mc);
        let c3 = TrainConfig { batch_size: 7, ..c1 };
        let (m, _) = fit(IndicatorModel::zeros(2).unwrap(), &st, &c3, None).unwrap();
        assert!(m.linear.theta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            k_s: 0,
            ..cfg(LossMode::Mc)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            k_s: 0,
            ..cfg(LossMode::PerSeed)
        }
        .validate()
        .is_ok());
        assert!(TrainConfig {
            validation_fraction: 1.0,
            ..cfg(LossMode::Mc)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..cfg(LossMode::Mc)
        }
        .validate()
        .is_err());
        assert!("per_seed".parse::<LossMode>().is_ok());
        assert!("bogus".parse::<LossMode>().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let st = toy();
        let c = TrainConfig {
            learning_rate: 1e308,
            ..cfg(LossMode::Full)
        };
        let err = fit(IndicatorModel::zeros(2).unwrap(), &st, &c, None).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { .. }), "{err}");
    }

    #[test]
    fn history_csv_shape() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: None,
                rmse: Some(0.25),
                spearman: None,
            }],
            ..TrainHistory::default()
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{HISTORY_HEADER}\n1,0.5,,0.25,\n")
        );
    }

    #[test]
    fn patience_counting() {
        let mut es = EarlyStopping::new(3, 1e-5);
        let seq: Vec<_> = [1.0, 1.1, 1.2, 1.3, 1.4].iter().map(|&v| es.observe(v)).collect();
        assert_eq!(
            seq[..4],
            [
                Observation::Improved,
                Observation::NotImproved,
                Observation::NotImproved,
                Observation::Stop
            ]
        );
        let mut es = EarlyStopping::new(2, 0.1);
        assert_eq!(es.observe(1.0), Observation::Improved);
        assert_eq!(es.observe(0.95), Observation::NotImproved);
        assert_eq!(es.observe(0.85), Observation::Improved);
        let mut never = EarlyStopping::new(0, 0.0);
        assert!((0..100).all(|i| never.observe(i as f64) != Observation::Stop));
    }

    #[test]
    fn early_stopping_returns_best_parameters() {
        let mut counts = BTreeMap::new();
        for s in 0..6u32 {
            for r in 0..6u32 {
                if s != r {
                    counts.insert((ItemId(s), ItemId(r)), 1 + ((s + r) % 3) as u64);
                }
            }
        }
        let st = CooccurrenceStats::from_counts(vec![10; 6], counts);
        let c = TrainConfig {
            loss_mode: LossMode::PerSeed,
            k_cp: 200,
            k_r: 1,
            learning_rate: 0.5,
            max_epochs: 60,
            patience: 3,
            min_delta: 0.0,
            validation_fraction: 0.2,
            validation_size: 100,
            ..TrainConfig::default()
        };
        let (m, h) = fit(IndicatorModel::zeros(6).unwrap(), &st, &c, None).unwrap();
        let trainer = Trainer::new(&st, c.clone()).unwrap();
        let best = h.records[h.best_epoch - 1].val_loss.unwrap();
        assert!(h.records.iter().all(|r| r.val_loss.unwrap() >= best));
        assert_eq!(mean_loss(&m, trainer.validation()).unwrap(), best);
        if h.stopped_early {
            assert_eq!(h.len() - h.best_epoch, 3);
        }
    }
}
