//! Full-objective training of the indicator model on Bernoulli feedback.
//!
//! cargo run --release --example synthetic_convergence -- [n_items]

use sparse_cf::synth::{run_convergence_experiment, ConvergenceConfig, SyntheticConfig};

fn main() {
    let n_items = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let config = ConvergenceConfig {
        synthetic: SyntheticConfig {
            n_items,
            ..SyntheticConfig::default()
        },
        ..ConvergenceConfig::default()
    };
    let (_, report) = run_convergence_experiment(&config).expect("experiment");
    for r in report.history.records.iter().step_by(20) {
        println!(
            "epoch {:>3}  loss {:.6}  rmse {:.3e}  spearman {:.6}",
            r.epoch,
            r.train_loss,
            r.rmse.unwrap_or(f64::NAN),
            r.spearman.unwrap_or(f64::NAN)
        );
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}
