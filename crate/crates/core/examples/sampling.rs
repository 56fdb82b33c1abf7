//! Draws Monte Carlo and per-seed batches from a small purchase log and
//! compares empirical frequencies to the sampling weights.
//!
//! cargo run --release --example sampling

use std::collections::BTreeMap;

use sparse_cf::corpus::{PurchaseRecord, TransactionLog};
use sparse_cf::sampling::{build_item_sampler, build_pair_sampler, sample_mc_batch, sample_per_seed_batch};
use sparse_cf::seed::{self, Stream};

fn main() {
    let baskets: &[(&str, &[&str])] = &[
        ("ann", &["tent", "stove", "lamp"]),
        ("bo", &["tent", "stove"]),
        ("cy", &["lamp", "rope"]),
        ("di", &["tent", "rope", "stove"]),
        ("ed", &["stove"]),
    ];
    let records = baskets.iter().flat_map(|(user, items)| {
        items
            .iter()
            .enumerate()
            .map(move |(t, item)| PurchaseRecord::new(*user, *item, t as i64))
    });
    let log = TransactionLog::ingest(records);
    let stats = log.stats();
    println!(
        "{} items, |CP| = {}, Z = {:.3}, |CP|/Z^2 = {:.4}",
        stats.n_items(),
        stats.total_pairs(),
        stats.z(),
        stats.matched_ratio()
    );

    let mut pairs = build_pair_sampler(&stats, seed::stream_seed(1, Stream::PairSampler)).unwrap();
    let mut items = build_item_sampler(&stats, seed::stream_seed(1, Stream::ItemSampler)).unwrap();

    let n = 100_000;
    let mut counts = BTreeMap::new();
    for t in items.draw_n(n) {
        *counts.entry(t).or_insert(0usize) += 1;
    }
    println!("\nitem        n_D  P(sqrt)  empirical");
    for (i, t) in items.support().iter().enumerate() {
        println!(
            "{:<10} {:>4}  {:.4}   {:.4}",
            log.item_name(*t),
            stats.n_d(*t),
            items.probability(i),
            counts.get(t).copied().unwrap_or(0) as f64 / n as f64
        );
    }

    let mc = sample_mc_batch(&mut pairs, &mut items, 4, 2, 3);
    println!(
        "\nMC batch: {} positives, {} negatives",
        mc.positives.len(),
        mc.negatives.len()
    );
    let show = |p: &(sparse_cf::corpus::ItemId, sparse_cf::corpus::ItemId)| {
        format!("({}, {})", log.item_name(p.0), log.item_name(p.1))
    };
    println!(
        "  positives: {}",
        mc.positives.iter().map(show).collect::<Vec<_>>().join(" ")
    );
    println!(
        "  negatives: {}",
        mc.negatives.iter().map(show).collect::<Vec<_>>().join(" ")
    );

    let ps = sample_per_seed_batch(&mut pairs, &mut items, 2, 4);
    println!(
        "\nper-seed batch: {} positives, {} negatives",
        ps.positives.len(),
        ps.negatives.len()
    );
    println!(
        "  negatives: {}",
        ps.negatives.iter().map(show).collect::<Vec<_>>().join(" ")
    );
}
