use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn matn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = matn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const DATA: [&str; 6] = ["--data", "d.tsv", "--behaviors", "view,fav,cart,buy", "--target", "buy"];

fn with_data<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(&DATA);
    v.extend_from_slice(rest);
    v
}

/// Small synthetic dataset in a fresh directory.
fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(
        dir.path(),
        &[
            "gen-synthetic",
            "--users",
            "60",
            "--items",
            "120",
            "--seed",
            "3",
            "--out",
            "d.tsv",
        ],
    );
    dir
}

#[test]
fn gen_synthetic_writes_tsv_and_sidecar() {
    let dir = workspace();
    let tsv = fs::read_to_string(dir.path().join("d.tsv")).unwrap();
    assert!(tsv.lines().all(|l| l.split('\t').count() == 3));
    let spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d.tsv.spec.json")).unwrap()).unwrap();
    assert_eq!(spec["num_users"], 60);
    assert_eq!(spec["seed"], 3);
}

#[test]
fn zero_epoch_training_is_reproducible() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &with_data("train", &["--epochs", "0", "--out", "a.ckpt"]));
    ok(
        d,
        &with_data("train", &["--epochs", "0", "--out", "b.ckpt", "--workers", "3"]),
    );
    assert_eq!(fs::read(d.join("a.ckpt")).unwrap(), fs::read(d.join("b.ckpt")).unwrap());
    ok(
        d,
        &with_data("train", &["--epochs", "0", "--out", "c.ckpt", "--seed", "1"]),
    );
    assert_ne!(fs::read(d.join("a.ckpt")).unwrap(), fs::read(d.join("c.ckpt")).unwrap());
}

#[test]
fn missing_target_is_a_usage_error() {
    let dir = workspace();
    let out = matn(
        dir.path(),
        &[
            "train",
            "--data",
            "d.tsv",
            "--behaviors",
            "view,fav,cart,buy",
            "--out",
            "m.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_target_label_is_a_runtime_error() {
    let dir = workspace();
    let out = matn(
        dir.path(),
        &[
            "train",
            "--data",
            "d.tsv",
            "--behaviors",
            "view,fav",
            "--target",
            "buy",
            "--out",
            "m.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_evaluate_recommend_export_agree() {
    let dir = workspace();
    let d = dir.path();
    ok(
        d,
        &with_data(
            "train",
            &[
                "--epochs",
                "3",
                "--out",
                "m.ckpt",
                "--loss-log",
                "loss.csv",
                "--metrics-out",
                "train_metrics.csv",
            ],
        ),
    );

    let loss = fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("m.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["epoch_seconds"].as_array().unwrap().len(), 3);

    let evaluated = ok(d, &with_data("evaluate", &["--checkpoint", "m.ckpt"]));
    assert_eq!(evaluated, fs::read_to_string(d.join("train_metrics.csv")).unwrap());
    assert!(evaluated.starts_with("k,hr,ndcg\n"));
    assert_eq!(evaluated.lines().count(), 7);

    let recs = ok(
        d,
        &with_data("recommend", &["--checkpoint", "m.ckpt", "--user", "u0", "--topk", "5"]),
    );
    let scores: Vec<f64> = recs
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scores.len(), 5);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let weights = ok(
        d,
        &with_data("export-weights", &["--checkpoint", "m.ckpt", "--user", "u0,ghost"]),
    );
    let mut lines = weights.lines();
    assert_eq!(lines.next(), Some("user,block,row,view,fav,cart,buy"));
    // 2 heads × 4 query behaviors + 8 memory slots + 1 gate row.
    assert_eq!(lines.count(), 2 * 4 + 8 + 1);
}

#[test]
fn ablate_full_matches_train_then_evaluate() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &with_data("train", &["--epochs", "2", "--out", "m.ckpt"]));
    let evaluated = ok(d, &with_data("evaluate", &["--checkpoint", "m.ckpt"]));
    let ablated = ok(d, &with_data("ablate", &["--epochs", "2", "--variants", "full"]));
    let expected: String = evaluated.lines().skip(1).map(|l| format!("full,{l}\n")).collect();
    assert_eq!(ablated, format!("variant,k,hr,ndcg\n{expected}"));
}

#[test]
fn baseline_checkpoint_evaluates() {
    let dir = workspace();
    let d = dir.path();
    let fitted = ok(
        d,
        &with_data(
            "baseline-biasmf",
            &["--epochs", "2", "--out", "b.ckpt", "--metrics-out", "m.csv"],
        ),
    );
    assert!(fitted.is_empty());
    let evaluated = ok(d, &with_data("evaluate", &["--checkpoint", "b.ckpt"]));
    assert_eq!(evaluated, fs::read_to_string(d.join("m.csv")).unwrap());
    let out = matn(
        d,
        &with_data("export-weights", &["--checkpoint", "b.ckpt", "--user", "u0"]),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mismatched_data_and_unknown_user_fail() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &with_data("train", &["--epochs", "0", "--out", "m.ckpt"]));
    ok(
        d,
        &[
            "gen-synthetic",
            "--users",
            "50",
            "--items",
            "120",
            "--seed",
            "3",
            "--out",
            "other.tsv",
        ],
    );
    let out = matn(
        d,
        &[
            "evaluate",
            "--data",
            "other.tsv",
            "--behaviors",
            "view,fav,cart,buy",
            "--target",
            "buy",
            "--checkpoint",
            "m.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("user"));

    let out = matn(
        d,
        &with_data("recommend", &["--checkpoint", "m.ckpt", "--user", "ghost"]),
    );
    assert_eq!(out.status.code(), Some(1));
}
