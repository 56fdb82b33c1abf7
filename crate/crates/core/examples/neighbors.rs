//! Trains a small content model and lists items at increasing distance
//! from an anchor in the learned embedding space.
//!
//! cargo run --release --example neighbors

use sparse_cf::corpus::{ItemCatalog, TransactionLog};
use sparse_cf::eval::nearest_neighbors;
use sparse_cf::nn::{Activation, ModelSpec};
use sparse_cf::synth::{generate_content_corpus, ContentCorpusConfig};
use sparse_cf::train::{train_content, TrainConfig};

fn main() {
    let corpus = generate_content_corpus(&ContentCorpusConfig {
        n_clusters: 4,
        items_per_cluster: 60,
        test_items_per_cluster: 20,
        n_users: 1500,
        ..ContentCorpusConfig::default()
    })
    .unwrap();
    let log = TransactionLog::ingest(corpus.train.clone());
    let catalog =
        ItemCatalog::build_with_vocab_from(corpus.schema.clone(), &corpus.catalog, |id| log.item_id(id).is_some())
            .unwrap();
    let spec = ModelSpec {
        activation: Activation::Relu,
        d_emb: 16,
        d_item: 32,
        d_head: 32,
        ..ModelSpec::default()
    };
    let config = TrainConfig {
        k_cp: 5_000,
        k_r: 4,
        learning_rate: 0.05,
        max_epochs: 15,
        patience: 0,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, history) = train_content(&catalog, &log, &spec, &config).unwrap();
    println!("trained {} epochs, best {}", history.len(), history.best_epoch);

    let features: Vec<_> = (0..catalog.len()).map(|p| catalog.features(p).clone()).collect();
    let positions = [0, 1, 2, 5, 10, 50, 100, 200, 280];
    for anchor in ["item00000", "item00130"] {
        let a = catalog.position(anchor).unwrap();
        println!("\n{anchor}: {}", catalog.title(a));
        for n in nearest_neighbors(&model, a, &features, &positions).unwrap() {
            println!("{:>5}  {:.4}  {}", n.position, n.distance, catalog.title(n.item));
        }
    }
}
