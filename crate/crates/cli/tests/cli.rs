use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "dims.m_lex=6",
    "dims.m_node=8",
    "dims.m_interp=6",
    "dims.m_type=6",
    "parser.epochs=3",
    "types.autoencoder_epochs=1",
    "types.decoder_epochs=1",
    "types.controller_epochs=1",
    "types.steps_per_epoch=5",
    "types.eval_samples=20",
    "interpreter.epochs=1",
    "eval.bootstrap=50",
];

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccg-induce"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("CCG_INDUCE_SEED")
        .output()
        .expect("binary runs")
}

fn run_small(out: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    for kv in SMALL {
        all.extend(["--set", kv]);
    }
    run(out, &all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn summary(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("JSON summary on stdout")
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let s = summary(&run_small(out, &["synth", "--size", "60"]));
    assert_eq!(s["records"], 60);
    assert!(out.join("dataset.tsv").is_file());

    let s = summary(&run_small(out, &["eval"]));
    assert!(s.get("pearson").is_some());
    let eval: Value = serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["records"], 60);

    // interpreter before the type grammar is a stage-order error
    let early = run_small(out, &["train-interpreter"]);
    assert_eq!(code(&early), 1);

    summary(&run_small(out, &["train-parser"]));
    assert_eq!(code(&run_small(out, &["train-interpreter"])), 1);
    let s = summary(&run_small(out, &["train-types"]));
    assert!(s["fidelity"]["autoencoder_accuracy"].is_number());
    let s = summary(&run_small(out, &["train-interpreter"]));
    assert!(s["sentence_rate"].is_number());

    summary(&run_small(out, &["decode-types", "--k", "2"]));
    let tsv = std::fs::read_to_string(out.join("decoded_types.tsv")).unwrap();
    assert!(tsv.starts_with("sentence_id\tstart\tend\trank\ttype\tlog_prob"));
    assert!(tsv.lines().count() > 1);

    let s = summary(&run_small(out, &["export-spans"]));
    assert!(s["rows"].as_u64().unwrap() > 0);
    let header = std::fs::read_to_string(out.join("spans.tsv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split('\t').count(), 5 + 16);

    assert!(out.join("logs").join("train-types.json").is_file());
    assert!(out.join("config.toml").is_file());
    assert!(!out.join(".lock").exists());
}

#[test]
fn artifacts_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        summary(&run_small(d, &["--seed", "3", "synth", "--size", "40"]));
        summary(&run_small(d, &["eval"]));
    }
    // the log summary carries wall-clock runtime, eval.json does not
    for f in ["dataset.tsv", "eval.json", "config.toml"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn gradcheck_and_selftest_pass() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&run(dir.path(), &["gradcheck"]));
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    summary(&run(dir.path(), &["selftest"]));
}

#[test]
fn bad_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "verb\tframe\tsentence\tacceptability_norm\nv\tf\ta b\tnope\n").unwrap();
    let o = run(dir.path(), &["ingest", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"));
    let o = run(dir.path(), &["ingest", dir.path().join("missing.tsv").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ingest_normalizes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.tsv");
    std::fs::write(&src, "sentence\tverb\tframe\tacceptability_norm\nSomeone knew.\tknow\tNP __ S\t0.25\n").unwrap();
    let s = summary(&run(dir.path(), &["ingest", src.to_str().unwrap()]));
    assert_eq!(s["records"], 1);
    let text = std::fs::read_to_string(dir.path().join("dataset.tsv")).unwrap();
    assert_eq!(text, "verb\tframe\tsentence\tacceptability_norm\nknow\tNP __ S\tsomeone knew\t0.25\n");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--set", "parser.momentum=1", "synth"])), 1);
    assert_eq!(code(&run(dir.path(), &["--set", "eval.folds=1", "synth"])), 1);
    assert_eq!(code(&run(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&run(dir.path(), &["train-types"])), 1);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

#[test]
fn held_lock_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".lock"), "").unwrap();
    let o = run(dir.path(), &["synth", "--size", "20"]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("dataset.tsv").exists());
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ccg-induce"))
        .args(["--out", dir.path().to_str().unwrap(), "synth", "--size", "20"])
        .env("CCG_INDUCE_INTERPRETER__GAMMA", "4.5")
        .output()
        .unwrap();
    summary(&o);
    let cfg = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(cfg.contains("gamma = 4.5"), "{cfg}");
}
