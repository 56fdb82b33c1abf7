//! Trains a content model on a generated marketplace and ranks held-out
//! items against a random pool.
//!
//! cargo run --release --example content_ranking -- [dcf-mean|dcf-rnn|linear] [epochs] [lr] [tanh|relu]

use std::time::Instant;

use sparse_cf::corpus::{ItemCatalog, TransactionLog};
use sparse_cf::eval::{evaluate_ranking, random_mrr, random_recall, ranking_task_from_logs, ModelRanker, RandomRanker};
use sparse_cf::nn::{Activation, ModelSpec};
use sparse_cf::synth::{generate_content_corpus, ContentCorpusConfig};
use sparse_cf::train::{train_content, LossMode, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let arch = args
        .next()
        .unwrap_or_else(|| "dcf-mean".into())
        .parse()
        .expect("architecture");
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let lr = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let activation = match args.next().as_deref() {
        Some("relu") => Activation::Relu,
        _ => Activation::Tanh,
    };

    let corpus = generate_content_corpus(&ContentCorpusConfig::default()).expect("corpus");
    let train_log = TransactionLog::ingest(corpus.train.clone());
    let test_log = TransactionLog::ingest(corpus.test.clone());
    let catalog = ItemCatalog::build_with_vocab_from(corpus.schema.clone(), &corpus.catalog, |id| {
        train_log.item_id(id).is_some()
    })
    .expect("catalog");

    let spec = ModelSpec {
        arch,
        activation,
        ..ModelSpec::default()
    };
    let config = TrainConfig {
        loss_mode: LossMode::PerSeed,
        k_cp: 20_000,
        k_r: 4,
        learning_rate: lr,
        max_epochs: epochs,
        patience: 0,
        validation_size: 5_000,
        seed: 11,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let (model, history) = train_content(&catalog, &train_log, &spec, &config).expect("training");
    for r in &history.records {
        print!("{}:{:.4}/{:.4} ", r.epoch, r.train_loss, r.val_loss.unwrap_or(f64::NAN));
    }
    println!();
    println!(
        "trained in {:.1}s, best epoch {}",
        t.elapsed().as_secs_f64(),
        history.best_epoch
    );

    let task = ranking_task_from_logs(&catalog, &train_log, &test_log, 100, 2000, 11).expect("task");
    let features: Vec<_> = (0..catalog.len()).map(|p| catalog.features(p).clone()).collect();
    let ks = [1, 10, 30];
    let trained = evaluate_ranking(&ModelRanker::new(&model, &features, &task).unwrap(), &task, &ks, 1).unwrap();
    let zero = model.zeroed();
    let untrained = evaluate_ranking(&ModelRanker::new(&zero, &features, &task).unwrap(), &task, &ks, 1).unwrap();
    let random = evaluate_ranking(&RandomRanker { seed: 11 }, &task, &ks, 1).unwrap();
    let p = task.pool_size();
    println!(
        "analytic random: recall@30 {:.4} mrr {:.4}",
        random_recall(30, p),
        random_mrr(p)
    );
    for (name, r) in [("trained", &trained), ("zero", &untrained), ("random", &random)] {
        println!(
            "{name:<8} recall@1 {:.3} @10 {:.3} @30 {:.3} mrr {:.4}",
            r.recall[&1], r.recall[&10], r.recall[&30], r.mrr
        );
    }
}
