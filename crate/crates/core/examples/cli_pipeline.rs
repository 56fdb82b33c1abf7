//! Runs the command line end to end in a temporary directory: generate a
//! corpus, train, evaluate against a random ranker, list neighbors.
//!
//! cargo run --release --example cli_pipeline

use sparse_cf::cli::run;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let (data, model, random) = (d("data"), d("model"), d("random"));
    let steps: Vec<Vec<&str>> = vec![
        vec![
            "synth-gen",
            "--corpus",
            "--clusters",
            "4",
            "--items-per-cluster",
            "50",
            "--test-items-per-cluster",
            "60",
            "--corpus-users",
            "1000",
            "--out",
            &data,
        ],
        vec![
            "train",
            "--data",
            &data,
            "--arch",
            "dcf-mean",
            "--activation",
            "relu",
            "--k-cp",
            "5000",
            "--k-r",
            "4",
            "--lr",
            "0.05",
            "--epochs",
            "5",
            "--out",
            &model,
        ],
        vec![
            "evaluate",
            "--data",
            &data,
            "--pool-size",
            "100",
            "--n-seeds",
            "50",
            "--k",
            "1,10",
            "--out",
            &model,
        ],
        vec![
            "evaluate",
            "--data",
            &data,
            "--arch",
            "random",
            "--pool-size",
            "100",
            "--n-seeds",
            "50",
            "--out",
            &random,
        ],
        vec![
            "neighbors",
            "--data",
            &data,
            "--item",
            "item00000",
            "--positions",
            "0,1,10,100",
            "--out",
            &model,
        ],
    ];
    for args in steps {
        println!("$ sparse-cf {}", args.join(" "));
        let code = run(std::iter::once("sparse-cf").chain(args.iter().copied()));
        assert_eq!(code, 0, "command failed");
        println!();
    }
    for f in ["model/ranking_report.json", "random/ranking_report.json"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        println!("{f}: recall {} mrr {}", v["recall"], v["mrr"]);
    }
}
