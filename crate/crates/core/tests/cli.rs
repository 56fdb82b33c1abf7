//! End-to-end runs of the command line on small inputs.

use std::fs;
use std::path::Path;

use sparse_cf::cli::run;

fn sparse_cf(args: &[&str]) -> i32 {
    run(std::iter::once("sparse-cf").chain(args.iter().copied()))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn csv_rows(file: &Path) -> usize {
    fs::read_to_string(file).unwrap().lines().count() - 1
}

#[test]
fn synthetic_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "m");
    assert_eq!(
        sparse_cf(&["synth-gen", "--items", "12", "--users", "500", "--out", &out]),
        0
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m/matrix_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_items"], 12);
    assert!(dir.path().join("m/synth-gen.config.toml").exists());

    let again = path(dir.path(), "m2");
    assert_eq!(sparse_cf(&["synth-gen", "--items", "12", "--users", "500", "--out", &again]), 0);
    assert_eq!(
        fs::read(dir.path().join("m/matrix_summary.json")).unwrap(),
        fs::read(dir.path().join("m2/matrix_summary.json")).unwrap()
    );

    // one item: no pairs, still a success
    assert_eq!(
        sparse_cf(&["synth-gen", "--items", "1", "--users", "50", "--out", &out]),
        0
    );

    let v = path(dir.path(), "v");
    let args = [
        "validate-objective",
        "--items",
        "8",
        "--users",
        "400",
        "--epochs",
        "30",
        "--out",
        &v,
    ];
    assert_eq!(sparse_cf(&args), 0);
    assert_eq!(csv_rows(&dir.path().join("v/convergence_history.csv")), 30);
    let strict = [&args[..], &["--check", "--max-rmse", "1e-12"]].concat();
    assert_eq!(sparse_cf(&strict), 1);
    assert_eq!(
        sparse_cf(&["validate-objective", "--epochs", "0", "--check", "--out", &v]),
        1
    );

    let s = path(dir.path(), "s");
    let code = sparse_cf(&[
        "ratio-sweep",
        "--items",
        "10",
        "--users",
        "400",
        "--k-cp",
        "500",
        "--epochs",
        "3",
        "--multipliers",
        "0.5,1,2",
        "--out",
        &s,
    ]);
    assert_eq!(code, 0);
    for m in ["0.5", "1", "2"] {
        assert_eq!(csv_rows(&dir.path().join(format!("s/ratio_{m}x.csv"))), 3);
    }
    let sweep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/ratio_sweep_summary.json")).unwrap()).unwrap();
    let best = sweep["runs"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["best_rmse"] == true)
        .count();
    assert_eq!(best, 1);
}

#[test]
fn corpus_train_evaluate_neighbors() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data");
    let model = path(dir.path(), "model");
    let code = sparse_cf(&[
        "synth-gen",
        "--corpus",
        "--clusters",
        "3",
        "--items-per-cluster",
        "30",
        "--test-items-per-cluster",
        "40",
        "--corpus-users",
        "300",
        "--out",
        &data,
    ]);
    assert_eq!(code, 0);
    for f in ["catalog.jsonl", "schema.tsv", "train.tsv", "test.tsv"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }

    let train = [
        "train",
        "--data",
        &data,
        "--arch",
        "dcf-rnn",
        "--k-cp",
        "500",
        "--k-r",
        "2",
        "--lr",
        "0.05",
        "--epochs",
        "2",
        "--patience",
        "0",
        "--d-emb",
        "4",
        "--d-item",
        "4",
        "--d-head",
        "4",
        "--d-rnn",
        "4",
        "--out",
        &model,
    ];
    assert_eq!(sparse_cf(&train), 0);
    assert!(dir.path().join("model/model.bin").exists());
    assert_eq!(csv_rows(&dir.path().join("model/train_history.csv")), 2);

    let eval = [
        "evaluate",
        "--data",
        &data,
        "--pool-size",
        "40",
        "--n-seeds",
        "20",
        "--k",
        "1,5",
        "--out",
        &model,
    ];
    assert_eq!(sparse_cf(&eval), 0);
    let report_path = dir.path().join("model/ranking_report.json");
    let first = fs::read(&report_path).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["n_seeds"], 20);
    assert!(report["recall"]["30"].is_number());
    assert!(report["recall"]["5"].is_number());

    // same inputs, any worker count: same bytes
    let parallel = [&eval[..], &["--workers", "3"]].concat();
    assert_eq!(sparse_cf(&parallel), 0);
    assert_eq!(fs::read(&report_path).unwrap(), first);

    let random = path(dir.path(), "random");
    assert_eq!(
        sparse_cf(&[
            "evaluate",
            "--data",
            &data,
            "--arch",
            "random",
            "--pool-size",
            "40",
            "--n-seeds",
            "20",
            "--out",
            &random
        ]),
        0
    );
    assert_eq!(
        sparse_cf(&["evaluate", "--data", &data, "--arch", "linear", "--out", &model]),
        2
    );

    let nb = [
        "neighbors",
        "--data",
        &data,
        "--item",
        "item00000",
        "--positions",
        "0,1,5,100000",
        "--out",
        &model,
    ];
    assert_eq!(sparse_cf(&nb), 0);
    let tsv = fs::read_to_string(dir.path().join("model/neighbors.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 4);
    assert_eq!(
        sparse_cf(&["neighbors", "--data", &data, "--item", "nope", "--out", &model]),
        2
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[training]\nlearning_rat = 0.1\n").unwrap();
    let out = path(dir.path(), "o");
    assert_eq!(
        sparse_cf(&["--config", cfg.to_str().unwrap(), "synth-gen", "--out", &out]),
        2
    );
    assert_eq!(sparse_cf(&["train", "--out", &out]), 2);
    assert_eq!(
        sparse_cf(&["train", "--data", &path(dir.path(), "missing"), "--out", &out]),
        2
    );
    assert_eq!(sparse_cf(&["synth-gen", "--items", "0", "--out", &out]), 2);
    assert_eq!(sparse_cf(&["train", "--lr", "fast"]), 2);
}

#[test]
fn config_file_values_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = path(dir.path(), "o");
    fs::write(&cfg, "seed = 99\n[synthetic]\nn_items = 6\nn_users = 200\n").unwrap();
    assert_eq!(
        sparse_cf(&["--config", cfg.to_str().unwrap(), "synth-gen", "--out", &out]),
        0
    );
    let resolved = fs::read_to_string(dir.path().join("o/synth-gen.config.toml")).unwrap();
    assert!(resolved.contains("seed = 99"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/matrix_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_items"], 6);
    assert_eq!(summary["n_users"], 200);
}
