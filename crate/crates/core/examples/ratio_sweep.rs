//! Monte Carlo training at several sampling ratios around `|CP|/Z²`.
//!
//! cargo run --release --example ratio_sweep -- [learning_rate] [epochs] [k_r]

use sparse_cf::synth::{run_ratio_sweep, RatioSweepConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let mut config = RatioSweepConfig::default();
    if let Some(lr) = args.next().and_then(|s| s.parse().ok()) {
        config.learning_rate = lr;
    }
    if let Some(e) = args.next().and_then(|s| s.parse().ok()) {
        config.epochs = e;
    }
    if let Some(k) = args.next().and_then(|s| s.parse().ok()) {
        config.k_r = Some(k);
    }
    let report = run_ratio_sweep(&config).expect("sweep");
    println!("matched ratio |CP|/Z² = {:.4}", report.matched_ratio);
    println!("mult   k_s      shift    median   rmse      rmse_shift spearman  to_0.99");
    for r in &report.runs {
        println!(
            "{:<6} {:<8} {:<8.4} {:<8.4} {:<9.3e} {:<10.3e} {:<9.5} {:?}{}",
            r.multiplier,
            r.k_s,
            r.shift,
            r.median_offset,
            r.final_rmse,
            r.final_rmse_shifted,
            r.final_spearman,
            r.epochs_to_spearman,
            if r.best_rmse { "  best" } else { "" }
        );
    }
}
