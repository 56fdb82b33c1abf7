//! Implicit-feedback corpora.
//!
//! A [`TransactionLog`] holds the purchase events `D` and the ordered
//! co-purchase events `CP` derived from per-user purchase histories.
//! [`CooccurrenceStats`] condenses a log into the sufficient statistics used
//! by every loss and oracle in this crate:
//!
//! - `n_CP(s, r)`: number of users who bought `s` and later `r`,
//! - `n_D(t)`: number of users who bought `t`,
//! - `|CP|`, `|D|` and `Z = Σ_t sqrt(n_D(t))`.
//!
//! Each user contributes at most once per item and at most once per ordered
//! pair, so `n_CP(s, r) <= min(n_D(s), n_D(r))` always holds.

mod catalog;

pub use catalog::{
    read_catalog, read_schema, write_catalog, write_schema, CatalogRecord, FeatureSchema, FeatureSetKind,
    FeatureSetSpec, ItemCatalog, ItemFeatures, Vocabulary, UNKNOWN_TOKEN, UNKNOWN_TOKEN_ID,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense item index, assigned in first-seen order by the structure that owns it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} has no recorded purchases")]
    ZeroPurchases(String),
    #[error("item {item}: feature set {set:?} is not part of the schema")]
    Schema { item: String, set: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One purchase event as read from a transactions file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PurchaseRecord {
    pub user: String,
    pub item: String,
    /// Seconds since the Unix epoch, or the raw integer from the input.
    pub timestamp: i64,
}

impl PurchaseRecord {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: i64) -> Self {
        PurchaseRecord {
            user: user.into(),
            item: item.into(),
            timestamp,
        }
    }
}

/// Parses a timestamp given either as an integer epoch or as ISO-8601
/// (RFC 3339, naive date-time, or plain date).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Parses one `user_id<TAB>item_id<TAB>timestamp` line. `line_no` is 1-based.
pub fn parse_transaction_line(line: &str, line_no: usize) -> Result<PurchaseRecord, CorpusError> {
    let err = |message: String| CorpusError::Parse { line: line_no, message };
    let mut fields = line.split('\t');
    let (user, item, ts) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
        (Some(u), Some(i), Some(t), None) => (u, i, t),
        _ => return Err(err(format!("expected 3 tab-separated fields, got {line:?}"))),
    };
    if user.is_empty() || item.is_empty() {
        return Err(err("empty user or item id".into()));
    }
    let timestamp = parse_timestamp(ts).ok_or_else(|| err(format!("bad timestamp {ts:?}")))?;
    Ok(PurchaseRecord::new(user, item, timestamp))
}

/// Reads a transactions file. Blank lines are skipped.
pub fn read_transactions<R: BufRead>(reader: R) -> Result<Vec<PurchaseRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_transaction_line(line, i + 1)?);
    }
    Ok(out)
}

pub fn write_transactions<W: Write>(mut w: W, records: &[PurchaseRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.user, r.item, r.timestamp)?;
    }
    Ok(())
}

/// Purchase and co-purchase events, with the user each event came from.
#[derive(Clone, Debug, Default)]
pub struct TransactionLog {
    item_names: Vec<String>,
    item_index: HashMap<String, ItemId>,
    user_names: Vec<String>,
    purchases: Vec<ItemId>,
    purchase_users: Vec<u32>,
    copurchases: Vec<(ItemId, ItemId)>,
    copurchase_users: Vec<u32>,
}

impl TransactionLog {
    /// Builds the log from raw purchase records.
    ///
    /// Within each user, events are ordered by timestamp with ties resolved by
    /// input order. A user's repeated purchases of an item collapse to the
    /// first one. Every ordered pair of distinct items `(t1, t2)` where `t2`
    /// comes after `t1` in that order becomes one co-purchase event.
    pub fn ingest<I>(records: I) -> TransactionLog
    where
        I: IntoIterator<Item = PurchaseRecord>,
    {
        let mut log = TransactionLog::default();
        let mut user_index: HashMap<String, u32> = HashMap::new();
        // (timestamp, input position, item) per user
        let mut histories: Vec<Vec<(i64, usize, ItemId)>> = Vec::new();

        for (pos, rec) in records.into_iter().enumerate() {
            let item = log.intern_item(&rec.item);
            let user = match user_index.get(&rec.user) {
                Some(&u) => u,
                None => {
                    let u = log.user_names.len() as u32;
                    user_index.insert(rec.user.clone(), u);
                    log.user_names.push(rec.user);
                    histories.push(Vec::new());
                    u
                }
            };
            histories[user as usize].push((rec.timestamp, pos, item));
        }

        for (user, mut events) in histories.into_iter().enumerate() {
            events.sort_by_key(|&(ts, pos, _)| (ts, pos));
            let mut seen = HashSet::with_capacity(events.len());
            let ordered: Vec<ItemId> = events
                .into_iter()
                .filter_map(|(_, _, item)| seen.insert(item).then_some(item))
                .collect();
            for &item in &ordered {
                log.purchases.push(item);
                log.purchase_users.push(user as u32);
            }
            for (i, &first) in ordered.iter().enumerate() {
                for &second in &ordered[i + 1..] {
                    log.copurchases.push((first, second));
                    log.copurchase_users.push(user as u32);
                }
            }
        }
        log
    }

    fn intern_item(&mut self, name: &str) -> ItemId {
        if let Some(&id) = self.item_index.get(name) {
            return id;
        }
        let id = ItemId(self.item_names.len() as u32);
        self.item_names.push(name.to_string());
        self.item_index.insert(name.to_string(), id);
        id
    }

    pub fn n_items(&self) -> usize {
        self.item_names.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn item_id(&self, name: &str) -> Option<ItemId> {
        self.item_index.get(name).copied()
    }

    pub fn item_name(&self, id: ItemId) -> &str {
        &self.item_names[id.index()]
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn user_name(&self, user: u32) -> &str {
        &self.user_names[user as usize]
    }

    pub fn purchases(&self) -> &[ItemId] {
        &self.purchases
    }

    pub fn purchase_users(&self) -> &[u32] {
        &self.purchase_users
    }

    pub fn copurchases(&self) -> &[(ItemId, ItemId)] {
        &self.copurchases
    }

    pub fn copurchase_users(&self) -> &[u32] {
        &self.copurchase_users
    }

    pub fn is_empty(&self) -> bool {
        self.purchases.is_empty()
    }

    pub fn stats(&self) -> CooccurrenceStats {
        compute_stats(self)
    }
}

/// Counts `n_CP`, `n_D`, `|CP|`, `|D|` and `Z` for a log.
pub fn compute_stats(log: &TransactionLog) -> CooccurrenceStats {
    let mut item_counts = vec![0u64; log.n_items()];
    for &t in &log.purchases {
        item_counts[t.index()] += 1;
    }
    let mut pair_counts = BTreeMap::new();
    for &pair in &log.copurchases {
        *pair_counts.entry(pair).or_insert(0u64) += 1;
    }
    CooccurrenceStats::from_counts(item_counts, pair_counts)
}

/// Sufficient statistics of a co-purchase corpus. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceStats {
    pair_counts: BTreeMap<(ItemId, ItemId), u64>,
    item_counts: Vec<u64>,
    total_pairs: u64,
    total_purchases: u64,
    z: f64,
}

impl CooccurrenceStats {
    /// `item_counts[t]` is `n_D(t)`; pairs with a zero count are dropped.
    pub fn from_counts(item_counts: Vec<u64>, pair_counts: BTreeMap<(ItemId, ItemId), u64>) -> CooccurrenceStats {
        let pair_counts: BTreeMap<_, _> = pair_counts.into_iter().filter(|&(_, c)| c > 0).collect();
        let total_pairs = pair_counts.values().sum();
        let total_purchases = item_counts.iter().sum();
        let z = item_counts.iter().map(|&c| (c as f64).sqrt()).sum();
        CooccurrenceStats {
            pair_counts,
            item_counts,
            total_pairs,
            total_purchases,
            z,
        }
    }

    pub fn n_items(&self) -> usize {
        self.item_counts.len()
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.item_counts.len() as u32).map(ItemId)
    }

    /// `n_CP(s, r)`; pairs never observed read as zero.
    pub fn n_cp(&self, s: ItemId, r: ItemId) -> u64 {
        self.pair_counts.get(&(s, r)).copied().unwrap_or(0)
    }

    /// `n_D(t)`; unknown items read as zero.
    pub fn n_d(&self, t: ItemId) -> u64 {
        self.item_counts.get(t.index()).copied().unwrap_or(0)
    }

    pub fn item_counts(&self) -> &[u64] {
        &self.item_counts
    }

    /// Observed pairs in ascending `(s, r)` order.
    pub fn pairs(&self) -> impl Iterator<Item = ((ItemId, ItemId), u64)> + '_ {
        self.pair_counts.iter().map(|(&p, &c)| (p, c))
    }

    pub fn n_distinct_pairs(&self) -> usize {
        self.pair_counts.len()
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    pub fn total_purchases(&self) -> u64 {
        self.total_purchases
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// `|CP| / Z²`, the sampling ratio `k_CP / (k_s k_r)` that leaves the
    /// Monte Carlo optimum unshifted.
    pub fn matched_ratio(&self) -> f64 {
        self.total_pairs as f64 / (self.z * self.z)
    }

    /// Ochiai coefficient `n_CP(s,r) / (sqrt(n_D(s)) sqrt(n_D(r)))`.
    pub fn cosine(&self, s: ItemId, r: ItemId) -> Result<f64, CorpusError> {
        for t in [s, r] {
            if t.index() >= self.item_counts.len() {
                return Err(CorpusError::UnknownItem(t.to_string()));
            }
            if self.item_counts[t.index()] == 0 {
                return Err(CorpusError::ZeroPurchases(t.to_string()));
            }
        }
        let denom = (self.n_d(s) as f64).sqrt() * (self.n_d(r) as f64).sqrt();
        Ok(self.n_cp(s, r) as f64 / denom)
    }

    /// Drops the given pairs from `CP`, keeping `D` untouched.
    pub fn without_pairs(&self, held_out: &[(ItemId, ItemId)]) -> CooccurrenceStats {
        let mut pairs = self.pair_counts.clone();
        for p in held_out {
            pairs.remove(p);
        }
        CooccurrenceStats::from_counts(self.item_counts.clone(), pairs)
    }
}

/// Free-function form of [`CooccurrenceStats::cosine`].
pub fn cosine_oracle(stats: &CooccurrenceStats, s: ItemId, r: ItemId) -> Result<f64, CorpusError> {
    stats.cosine(s, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, t: i64) -> PurchaseRecord {
        PurchaseRecord::new(u, i, t)
    }

    #[test]
    fn single_user_two_items() {
        let log = TransactionLog::ingest(vec![rec("A", "x", 1), rec("A", "y", 2)]);
        let x = log.item_id("x").unwrap();
        let y = log.item_id("y").unwrap();
        assert_eq!(log.purchases(), &[x, y]);
        assert_eq!(log.copurchases(), &[(x, y)]);
    }

    #[test]
    fn two_users_counts() {
        let log = TransactionLog::ingest(vec![rec("A", "x", 1), rec("A", "y", 2), rec("B", "y", 1)]);
        let stats = log.stats();
        let (x, y) = (log.item_id("x").unwrap(), log.item_id("y").unwrap());
        assert_eq!(stats.n_d(x), 1);
        assert_eq!(stats.n_d(y), 2);
        assert_eq!(stats.n_cp(x, y), 1);
        assert_eq!(stats.n_cp(y, x), 0);
    }

    #[test]
    fn repeat_purchase_counted_once() {
        let log = TransactionLog::ingest(vec![rec("A", "x", 1), rec("A", "x", 5)]);
        assert_eq!(log.purchases().len(), 1);
        assert!(log.copurchases().is_empty());
    }

    #[test]
    fn timestamp_order_not_input_order() {
        let log = TransactionLog::ingest(vec![rec("A", "y", 9), rec("A", "x", 3)]);
        let (x, y) = (log.item_id("x").unwrap(), log.item_id("y").unwrap());
        assert_eq!(log.copurchases(), &[(x, y)]);
    }

    #[test]
    fn ties_follow_input_order() {
        let log = TransactionLog::ingest(vec![rec("A", "y", 3), rec("A", "x", 3)]);
        let (x, y) = (log.item_id("x").unwrap(), log.item_id("y").unwrap());
        assert_eq!(log.copurchases(), &[(y, x)]);
    }

    #[test]
    fn empty_log() {
        let stats = TransactionLog::ingest(Vec::new()).stats();
        assert_eq!(stats.total_pairs(), 0);
        assert_eq!(stats.total_purchases(), 0);
        assert_eq!(stats.z(), 0.0);
    }

    #[test]
    fn z_is_sum_of_roots() {
        let stats = CooccurrenceStats::from_counts(vec![4, 1], BTreeMap::new());
        assert_eq!(stats.z(), 3.0);
    }

    #[test]
    fn cosine_cases() {
        let mut pairs = BTreeMap::new();
        pairs.insert((ItemId(0), ItemId(1)), 1);
        pairs.insert((ItemId(0), ItemId(0)), 4);
        let stats = CooccurrenceStats::from_counts(vec![4, 1, 2], pairs);
        assert_eq!(stats.cosine(ItemId(0), ItemId(0)).unwrap(), 1.0);
        assert_eq!(stats.cosine(ItemId(0), ItemId(1)).unwrap(), 0.5);
        assert_eq!(stats.cosine(ItemId(1), ItemId(2)).unwrap(), 0.0);
        assert!(matches!(
            stats.cosine(ItemId(0), ItemId(9)),
            Err(CorpusError::UnknownItem(_))
        ));
    }

    #[test]
    fn cosine_zero_purchases_is_domain_error() {
        let stats = CooccurrenceStats::from_counts(vec![0, 1], BTreeMap::new());
        assert!(matches!(
            stats.cosine(ItemId(0), ItemId(1)),
            Err(CorpusError::ZeroPurchases(_))
        ));
    }

    #[test]
    fn parse_lines() {
        let r = parse_transaction_line("u1\titem9\t2016-06-01T00:00:00Z", 1).unwrap();
        assert_eq!(r.timestamp, 1464739200);
        let r = parse_transaction_line("u1\titem9\t2016-06-01", 1).unwrap();
        assert_eq!(r.timestamp, 1464739200);
        let r = parse_transaction_line("u1\titem9\t42", 1).unwrap();
        assert_eq!(r.timestamp, 42);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let input = "a\tx\t1\nb\ty\n";
        match read_transactions(input.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let input = "a\tx\tyesterday\n";
        assert!(matches!(
            read_transactions(input.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_stream_is_valid() {
        assert!(read_transactions("".as_bytes()).unwrap().is_empty());
    }
}
