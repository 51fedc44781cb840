use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mgembed_cli::stages::{cmd_e2e, Task};
use mgembed_cli::PipelineConfig;

const SMALL: [&str; 4] = ["users=400", "sellers=40", "attributes=24", "communities=4"];

fn mgembed(dir: &Path, args: &[&str]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mgembed"));
    cmd.current_dir(dir).args(["--seed", "42", "--workers", "1"]);
    for s in SMALL {
        cmd.args(["--set", s]);
    }
    cmd.args(args);
    cmd.output().expect("binary runs")
}

fn run(dir: &Path, args: &[&str]) {
    let out = mgembed(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn with<'a>(prefix: &[&'a str], args: &[&'a str]) -> Vec<&'a str> {
    [prefix, args].concat()
}

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    for s in SMALL {
        cfg.apply(s).unwrap();
    }
    cfg
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            let dir = path.strip_prefix(root).unwrap().to_path_buf();
            out.extend(files(&path).into_iter().map(|p| dir.join(p)));
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    out.sort();
    out
}

fn assert_same_tree(monolithic: &Path, chained: &Path) {
    let expected: Vec<PathBuf> = files(monolithic).into_iter().filter(|p| p != Path::new("manifest.txt")).collect();
    assert_eq!(files(chained), expected);
    for rel in &expected {
        let (a, b) = (monolithic.join(rel), chained.join(rel));
        assert!(fs::read(&a).expect(&a.display().to_string()) == fs::read(&b).expect(&b.display().to_string()), "{} differs", rel.display());
    }
}

#[test]
fn chained_buying_stages_match_e2e() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.apply("mimic=regression").unwrap();
    cmd_e2e(&cfg, Task::Buying, &tmp.path().join("mono")).unwrap();

    let d = tmp.path().join("chain");
    fs::create_dir_all(&d).unwrap();
    let m = ["--set", "mimic=regression"];
    run(&d, &with(&m, &["synth", "--out", "data"]));
    run(&d, &with(&m, &["train-embed", "--graph", "data/friendship.edges", "--name", "friendship", "--out", "embeddings/friendship.emb"]));
    run(&d, &with(&m, &["holdout", "--graph", "data/purchases.edges", "--train-out", "data/purchases_train.edges", "--nodes-out", "data/heldout_users.txt"]));
    run(&d, &with(&m, &["train-embed", "--graph", "data/purchases_train.edges", "--bipartite", "--name", "transactions", "--out", "embeddings/transactions.emb"]));
    run(&d, &with(&m, &["train-embed", "--graph", "data/attributes.edges", "--bipartite", "--name", "attributes", "--out", "embeddings/attributes.emb"]));
    run(&d, &with(&m, &["mimic", "train", "--graph", "data/friendship.edges", "--emb", "embeddings/transactions.emb", "--out", "work/mimic.model"]));
    run(&d, &with(&m, &[
        "mimic", "infer", "--graph", "data/friendship.edges", "--emb", "embeddings/transactions.emb", "--model", "work/mimic.model",
        "--nodes", "data/heldout_users.txt", "--out", "embeddings/transactions_filled.emb",
    ]));
    run(&d, &with(&m, &[
        "fuse", "--pairs", "data/purchases.edges", "--left", "embeddings/friendship.emb", "--left", "embeddings/transactions_filled.emb",
        "--right", "embeddings/transactions.emb", "--right", "embeddings/attributes.emb", "--out", "work/dataset.ds",
    ]));
    run(&d, &with(&m, &["split", "--dataset", "work/dataset.ds", "--test-groups", "data/heldout_users.txt", "--train-out", "work/train.ds", "--test-out", "work/test.ds"]));
    run(&d, &with(&m, &["classify", "--model-kind", "mlp", "--train", "work/train.ds", "--test", "work/test.ds", "--model-out", "work/classifier.model", "--predictions-out", "work/predictions.txt"]));
    run(&d, &with(&m, &["evaluate", "--predictions", "work/predictions.txt", "--out", "report"]));
    assert_same_tree(&tmp.path().join("mono"), &d);
}

#[test]
fn chained_credit_stages_match_e2e() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_e2e(&small_config(), Task::Credit, &tmp.path().join("mono")).unwrap();

    let d = tmp.path().join("chain");
    fs::create_dir_all(&d).unwrap();
    run(&d, &["synth", "--out", "data"]);
    run(&d, &["train-embed", "--graph", "data/friendship.edges", "--name", "friendship", "--out", "embeddings/friendship.emb"]);
    run(&d, &["train-embed", "--graph", "data/purchases.edges", "--bipartite", "--name", "transactions", "--out", "embeddings/transactions.emb"]);
    run(&d, &["fuse", "--labels", "data/credit_labels.tsv", "--left", "embeddings/friendship.emb", "--left", "embeddings/transactions.emb", "--out", "work/dataset.ds"]);
    run(&d, &["split", "--dataset", "work/dataset.ds", "--train-out", "work/train.ds", "--test-out", "work/test.ds"]);
    run(&d, &["learning-curve", "--model-kind", "logreg", "--dataset", "work/train.ds", "--out", "report/learning_curve.csv"]);
    run(&d, &["classify", "--model-kind", "logreg", "--train", "work/train.ds", "--test", "work/test.ds", "--model-out", "work/classifier.model", "--predictions-out", "work/predictions.txt"]);
    run(&d, &["evaluate", "--predictions", "work/predictions.txt", "--out", "report"]);
    assert_same_tree(&tmp.path().join("mono"), &d);
}

#[test]
fn perfect_scores_evaluate_to_unit_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("p.txt"), "a 0 0.1\nb 0 0.2\nc 1 0.8\nd 1 0.9\ne 0 0.3\n").unwrap();
    run(d, &["evaluate", "--predictions", "p.txt", "--out", "report"]);
    let report = fs::read_to_string(d.join("report/report.txt")).unwrap();
    assert!(report.lines().any(|l| l == "auc=1"), "{report}");
    assert!(report.lines().any(|l| l == "accuracy=1"), "{report}");
}

#[test]
fn mismatched_seed_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    run(d, &["synth", "--out", "data"]);
    let out = Command::new(env!("CARGO_BIN_EXE_mgembed"))
        .current_dir(d)
        .args(["--seed", "7", "train-embed", "--graph", "data/friendship.edges", "--out", "f.emb"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("f.emb").exists());
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(mgembed(d, &["--set", "dim=zero", "synth", "--out", "x"]).status.code(), Some(1));
    assert_eq!(mgembed(d, &["e2e", "--task", "lending", "--out", "x"]).status.code(), Some(1));
    fs::write(d.join("bad.edges"), "a\n").unwrap();
    assert_eq!(mgembed(d, &["train-embed", "--graph", "bad.edges", "--out", "x.emb"]).status.code(), Some(2));
}

#[test]
fn link_auc_rises_with_purchase_homophily() {
    let tmp = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for h in ["0", "0.5", "0.9"] {
        let mut total = 0.0;
        for s in [1u64, 2, 3] {
            let mut cfg = PipelineConfig::default();
            for kv in ["users=800", "sellers=80", "attributes=36", "communities=4", &format!("purchase_homophily={h}"), &format!("seed={s}")] {
                cfg.apply(kv).unwrap();
            }
            let out = cmd_e2e(&cfg, Task::Buying, &tmp.path().join(format!("h{h}-s{s}"))).unwrap();
            total += out.evaluation.report.auc.unwrap();
        }
        means.push(total / 3.0);
    }
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}
