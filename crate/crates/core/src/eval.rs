//! Ranking evaluation, agreement statistics and embedding neighbors.
//!
//! Items are addressed by position in a feature table (`&[ItemFeatures]`),
//! usually an [`ItemCatalog`](crate::corpus::ItemCatalog)'s positions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::Array1;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{ItemCatalog, ItemFeatures, TransactionLog};
use crate::nn::{ContentModel, NnError};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} needs a nonempty input")]
    Empty(&'static str),
    #[error("rank correlation undefined: one input has zero rank variance")]
    ZeroVariance,
    #[error("need {need} eligible items for the candidate pool, have {have}")]
    InsufficientItems { need: usize, have: usize },
    #[error("position {position} beyond {len} items")]
    Position { position: usize, len: usize },
    #[error("cutoff k must be at least 1")]
    InvalidK,
    #[error("evaluation item {0} is also a training item")]
    NotDisjoint(usize),
    #[error("item {0} is not in the catalog")]
    UnknownItem(String),
    #[error("model has no item embedder")]
    NoEmbedder,
    #[error(transparent)]
    Model(#[from] NnError),
}

/// Root mean squared difference.
pub fn rmse(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(EvalError::Empty("rmse"));
    }
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / xs.len() as f64).sqrt())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::Empty("spearman (length >= 2)"));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mean, b - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of ranks `<= k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if ranks.is_empty() {
        return Err(EvalError::Empty("recall_at_k"));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty("mrr"));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Expected recall@k of a random scorer with one relevant item among
/// `pool_size + 1` candidates.
pub fn random_recall(k: usize, pool_size: usize) -> f64 {
    k.min(pool_size + 1) as f64 / (pool_size + 1) as f64
}

/// Expected MRR of a random scorer: `H(P+1) / (P+1)`.
pub fn random_mrr(pool_size: usize) -> f64 {
    let n = pool_size + 1;
    (1..=n).map(|i| 1.0 / i as f64).sum::<f64>() / n as f64
}

/// Candidates ordered by descending score, ties by ascending id. Returns
/// `(id, rank)` with ranks `1..=n`.
pub fn rank_candidates(scored: &[(usize, f64)]) -> Vec<(usize, usize)> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().enumerate().map(|(i, (id, _))| (id, i + 1)).collect()
}

/// Rank of `target` under the order of [`rank_candidates`], without sorting.
pub fn rank_of(target: usize, target_score: f64, others: impl IntoIterator<Item = (usize, f64)>) -> usize {
    1 + others
        .into_iter()
        .filter(|&(id, s)| id != target && (s > target_score || (s == target_score && id < target)))
        .count()
}

/// Seeds with their single relevant item, and one candidate pool shared by
/// all seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingTask {
    pub seeds: Vec<(usize, usize)>,
    pub pool: Vec<usize>,
}

impl RankingTask {
    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }
}

/// Samples a pool of `pool_size` items from `eligible`, excluding training
/// items and every seed and relevant item of `eval_pairs`.
pub fn build_ranking_task(
    train_items: &BTreeSet<usize>,
    eligible: &[usize],
    eval_pairs: &[(usize, usize)],
    pool_size: usize,
    seed: u64,
) -> Result<RankingTask, EvalError> {
    let mut used = BTreeSet::new();
    for &(s, t) in eval_pairs {
        for item in [s, t] {
            if train_items.contains(&item) {
                return Err(EvalError::NotDisjoint(item));
            }
            used.insert(item);
        }
    }
    let candidates: Vec<usize> = eligible
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|i| !train_items.contains(i) && !used.contains(i))
        .collect();
    if candidates.len() < pool_size {
        return Err(EvalError::InsufficientItems {
            need: pool_size,
            have: candidates.len(),
        });
    }
    let mut rng = seed::rng(seed, Stream::Ranking);
    let mut pool: Vec<usize> = sample(&mut rng, candidates.len(), pool_size)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    pool.sort_unstable();
    Ok(RankingTask {
        seeds: eval_pairs.to_vec(),
        pool,
    })
}

/// Picks up to `n_seeds` test co-purchases with distinct seed items, then
/// builds the task with a pool drawn from catalog items never seen in
/// training. Items are addressed by catalog position.
pub fn ranking_task_from_logs(
    catalog: &ItemCatalog,
    train: &TransactionLog,
    test: &TransactionLog,
    n_seeds: usize,
    pool_size: usize,
    seed: u64,
) -> Result<RankingTask, EvalError> {
    let position = |name: &str| catalog.position(name).ok_or(EvalError::UnknownItem(name.to_string()));
    let train_items: BTreeSet<usize> = train
        .item_names()
        .iter()
        .map(|n| position(n))
        .collect::<Result<_, _>>()?;
    let mut pairs = BTreeSet::new();
    for &(s, r) in test.copurchases() {
        let pair = (position(test.item_name(s))?, position(test.item_name(r))?);
        if !train_items.contains(&pair.0) && !train_items.contains(&pair.1) {
            pairs.insert(pair);
        }
    }
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let mut rng = seed::rng(seed, Stream::EvalSeeds);
    let mut seen = BTreeSet::new();
    let mut chosen = Vec::new();
    for i in sample(&mut rng, pairs.len(), pairs.len()) {
        if chosen.len() == n_seeds {
            break;
        }
        if seen.insert(pairs[i].0) {
            chosen.push(pairs[i]);
        }
    }
    if chosen.is_empty() {
        return Err(EvalError::Empty("test co-purchases disjoint from training"));
    }
    let eligible: Vec<usize> = (0..catalog.len()).collect();
    build_ranking_task(&train_items, &eligible, &chosen, pool_size, seed)
}

/// Scores a seed against a list of candidates.
pub trait Ranker: Sync {
    fn scores(&self, seed: usize, candidates: &[usize]) -> Result<Vec<f64>, EvalError>;
}

/// A content model over a feature table. Network candidates are embedded
/// once and reused across seeds.
pub struct ModelRanker<'a> {
    model: &'a ContentModel,
    features: &'a [ItemFeatures],
    candidate_embeddings: BTreeMap<usize, Array1<f64>>,
}

impl<'a> ModelRanker<'a> {
    pub fn new(model: &'a ContentModel, features: &'a [ItemFeatures], task: &RankingTask) -> Result<Self, EvalError> {
        let mut candidate_embeddings = BTreeMap::new();
        if let ContentModel::Dcf(m) = model {
            let ids = task.pool.iter().copied().chain(task.seeds.iter().map(|p| p.1));
            for id in ids {
                let f = features.get(id).ok_or(EvalError::Position {
                    position: id,
                    len: features.len(),
                })?;
                candidate_embeddings.insert(id, m.candidate().embed(f)?);
            }
        }
        Ok(ModelRanker {
            model,
            features,
            candidate_embeddings,
        })
    }

    fn item(&self, id: usize) -> Result<&'a ItemFeatures, EvalError> {
        self.features.get(id).ok_or(EvalError::Position {
            position: id,
            len: self.features.len(),
        })
    }
}

impl Ranker for ModelRanker<'_> {
    fn scores(&self, seed: usize, candidates: &[usize]) -> Result<Vec<f64>, EvalError> {
        let fs = self.item(seed)?;
        match self.model {
            ContentModel::Dcf(m) => {
                let es = m.seed_embedder.embed(fs)?;
                candidates
                    .iter()
                    .map(|c| match self.candidate_embeddings.get(c) {
                        Some(ec) => Ok(m.head_score(&es, ec)),
                        None => Ok(m.predict_pair(fs, self.item(*c)?)?),
                    })
                    .collect()
            }
            ContentModel::Linear { .. } => candidates
                .iter()
                .map(|&c| Ok(self.model.score(fs, self.item(c)?)?))
                .collect(),
        }
    }
}

/// Uniform random scores, reproducible per (seed item, candidate list).
pub struct RandomRanker {
    pub seed: u64,
}

impl Ranker for RandomRanker {
    fn scores(&self, seed: usize, candidates: &[usize]) -> Result<Vec<f64>, EvalError> {
        let base = seed::stream_seed(self.seed, Stream::RandomScores);
        let mut rng = seed::rng_from(base ^ (seed as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
        Ok(candidates.iter().map(|_| rng.random::<f64>()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingReport {
    pub n_seeds: usize,
    pub pool_size: usize,
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub ranks: Vec<usize>,
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<usize>, pool_size: usize, ks: &[usize]) -> Result<Self, EvalError> {
        let mut recall = BTreeMap::new();
        for &k in ks {
            recall.insert(k, recall_at_k(&ranks, k)?);
        }
        Ok(RankingReport {
            n_seeds: ranks.len(),
            pool_size,
            recall,
            mrr: mrr(&ranks)?,
            ranks,
        })
    }

    pub fn write_json<W: Write>(&self, w: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::other)
    }
}

fn seed_rank<R: Ranker + ?Sized>(ranker: &R, task: &RankingTask, (s, t): (usize, usize)) -> Result<usize, EvalError> {
    let mut candidates = task.pool.clone();
    candidates.push(t);
    let scores = ranker.scores(s, &candidates)?;
    let ts = scores[scores.len() - 1];
    Ok(rank_of(t, ts, candidates.into_iter().zip(scores)))
}

/// Rank of each seed's relevant item among the pool plus that item.
/// `workers > 1` splits seeds across scoped threads; results are identical
/// for every worker count.
pub fn evaluate_ranking<R: Ranker + ?Sized>(
    ranker: &R,
    task: &RankingTask,
    ks: &[usize],
    workers: usize,
) -> Result<RankingReport, EvalError> {
    let workers = workers.max(1).min(task.seeds.len().max(1));
    let ranks: Vec<usize> = if workers == 1 {
        task.seeds
            .iter()
            .map(|&p| seed_rank(ranker, task, p))
            .collect::<Result<_, _>>()?
    } else {
        let chunk = task.seeds.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = task
                .seeds
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&p| seed_rank(ranker, task, p))
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(task.seeds.len());
            for h in handles {
                out.extend(h.join().expect("scoring thread panicked")?);
            }
            Ok::<_, EvalError>(out)
        })?
    };
    RankingReport::from_ranks(ranks, task.pool_size(), ks)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub position: usize,
    pub item: usize,
    pub distance: f64,
}

/// Items sorted by Euclidean distance between seed-side embeddings and the
/// anchor's (ties by position), reported at the requested sorted positions.
pub fn nearest_neighbors(
    model: &ContentModel,
    anchor: usize,
    features: &[ItemFeatures],
    positions: &[usize],
) -> Result<Vec<Neighbor>, EvalError> {
    let n = features.len();
    if anchor >= n {
        return Err(EvalError::Position {
            position: anchor,
            len: n,
        });
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= n) {
        return Err(EvalError::Position { position: p, len: n });
    }
    let embed = |f: &ItemFeatures| model.embed(f)?.ok_or(EvalError::NoEmbedder);
    let a = embed(&features[anchor])?;
    let mut dist: Vec<(usize, f64)> = Vec::with_capacity(n);
    for (i, f) in features.iter().enumerate() {
        let d = if i == anchor {
            0.0
        } else {
            (&embed(f)? - &a).mapv(|v| v * v).sum().sqrt()
        };
        dist.push((i, d));
    }
    // anchor first among zero-distance items
    dist.sort_by(|x, y| {
        x.1.total_cmp(&y.1)
            .then((x.0 != anchor).cmp(&(y.0 != anchor)))
            .then(x.0.cmp(&y.0))
    });
    Ok(positions
        .iter()
        .map(|&p| Neighbor {
            position: p,
            item: dist[p].0,
            distance: dist[p].1,
        })
        .collect())
}

pub const NEIGHBOR_HEADER: &str = "position\titem_id\ttitle\tdistance";

/// `position, item_id, title, distance` rows.
pub fn write_neighbors_tsv<W: Write>(
    mut w: W,
    rows: &[Neighbor],
    name: impl Fn(usize) -> String,
    title: impl Fn(usize) -> String,
) -> std::io::Result<()> {
    writeln!(w, "{NEIGHBOR_HEADER}")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.position, name(r.item), title(r.item), r.distance)?;
    }
    Ok(())
}
