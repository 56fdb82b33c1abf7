//! The per-pair objective peaks at the log of the Ochiai cosine, and
//! sampling moves the peak by a constant.
//!
//! cargo run --release --example objective_optimum

use sparse_cf::objective::{mc_shift, optimal_h, pair_objective};

fn main() {
    println!(" n_cp  n_ds  n_dr   optimal h   log cos      objective(h*-0.1, h*, h*+0.1)");
    for &(cp, ds, dr) in &[(1, 1, 1), (3, 4, 9), (2, 10, 40), (5, 50, 50), (0, 3, 3)] {
        let h = optimal_h(cp, ds, dr).unwrap();
        let cos = cp as f64 / ((ds as f64).sqrt() * (dr as f64).sqrt());
        match h.finite() {
            Some(h) => println!(
                "{cp:>5} {ds:>5} {dr:>5}  {h:>10.6} {:>10.6}   {:.6} {:.6} {:.6}",
                cos.ln(),
                pair_objective(h - 0.1, cp, ds, dr),
                pair_objective(h, cp, ds, dr),
                pair_objective(h + 0.1, cp, ds, dr)
            ),
            None => println!("{cp:>5} {ds:>5} {dr:>5}        -inf       -inf   (never co-purchased)"),
        }
    }

    // 100 items bought by about half of 10,000 users each
    let (z, cp_total) = (100.0 * 5000f64.sqrt(), 100 * 99 * 2500u64);
    println!(
        "\nshift of the sampled optimum, |CP|/Z^2 = {:.4}",
        cp_total as f64 / (z * z)
    );
    for &(k_cp, k_s, k_r) in &[
        (100_000, 440, 440),
        (100_000, 1400, 440),
        (100_000, 140, 440),
        (200_000, 200_000, 4),
    ] {
        let shift = mc_shift(k_cp, k_s, k_r, z, cp_total).unwrap();
        println!("  k_cp {k_cp:>7} k_s {k_s:>7} k_r {k_r:>4}: {shift:+.4}");
    }
}
