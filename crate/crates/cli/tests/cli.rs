//! End-to-end runs of the `mmtrans` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mmtrans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmtrans"))
        .args(args)
        .env_remove("MMTRANS_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn inspect_shows_subtokenized_sbt() {
    let sol = repo("data/toy-corpus/LatiumSeller.sol");
    let o = mmtrans(&["inspect", "--sol", s(&sol), "--method", "_tokensToSell"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("<START> ( FunctionDefinition ( SimpleName _tokens To Sell ) SimpleName"));
}

#[test]
fn inspect_graph_lists_nodes_and_edges() {
    let sol = repo("data/toy-corpus/LatiumSeller.sol");
    let o = mmtrans(&["inspect", "--sol", s(&sol), "--method", "_tokensToSell", "--show", "graph"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    let n: usize = lines.next().unwrap().strip_prefix("nodes ").unwrap().parse().unwrap();
    let m: usize = lines.nth(n).unwrap().strip_prefix("edges ").unwrap().parse().unwrap();
    assert_eq!(m, n - 1);
}

#[test]
fn unknown_method_exits_3() {
    let sol = repo("data/toy-corpus/LatiumSeller.sol");
    let o = mmtrans(&["inspect", "--sol", s(&sol), "--method", "noSuchMethod"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn empty_source_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mmtrans(&["build-corpus", "--src", s(dir.path()), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty corpus"));
}

#[test]
fn score_identical_files_is_perfect_on_bleu_and_rouge() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs.txt");
    fs::write(&refs, "returns the owner of the contract\ntransfer tokens to the given address\n").unwrap();
    let o = mmtrans(&["score", "--predictions", s(&refs), "--references", s(&refs)]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("S-BLEU 100.00"), "{out}");
    assert!(out.contains("C-BLEU 100.00"), "{out}");
    assert!(out.contains("ROUGE-LCS F1 100.00"), "{out}");
}

#[test]
fn score_line_count_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    fs::write(&a, "one line here\n").unwrap();
    fs::write(&b, "one line here\nand another\n").unwrap();
    let o = mmtrans(&["score", "--predictions", s(&a), "--references", s(&b)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_train_evaluate_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let o = mmtrans(&["build-corpus", "--src", s(&repo("data/toy-corpus")), "--out", s(&data), "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("30"), "{}", stdout(&o));

    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "validate_on = \"train\"\nd_model = 8\nd_ff = 16\nheads = 2\ndropout = 0.0\nwarmup_steps = 10\n\
         batch_size = 30\nvalidate_every = 2\nvalidate_each_epoch = false\nmax_decode = 5\n",
    )
    .unwrap();
    let bad = mmtrans(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--heads", "3"]);
    assert_eq!(bad.status.code(), Some(2));

    let o = mmtrans(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--max-steps", "4", "--seed", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.ckpt", "last.ckpt", "metrics.jsonl", "run.toml"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 4);

    let ckpt = run.join("best.ckpt");
    let o = mmtrans(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "train", "--max-decode", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let preds = run.join("predictions.train.txt");
    let refs = run.join("references.train.txt");
    let rescored = mmtrans(&["score", "--predictions", s(&preds), "--references", s(&refs)]);
    assert_eq!(stdout(&o).lines().next(), stdout(&rescored).lines().next());

    let sol = repo("data/toy-corpus/LatiumSeller.sol");
    let o = mmtrans(&["summarize", "--checkpoint", s(&ckpt), "--sol", s(&sol), "--method", "_tokensToSell", "--max-decode", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).split_whitespace().count() <= 5);
}
