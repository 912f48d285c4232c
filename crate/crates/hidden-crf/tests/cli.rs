use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hidden-crf"));
    c.env_remove("RUST_LOG").env("HIDDEN_CRF_THREADS", "2");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn planted(dir: &Path) {
    fs::write(
        dir.join("planted.json"),
        r#"{"n_labels": 3, "n_sentences": 150, "accuracies": [0.6, 0.75, 0.9], "seed": 4}"#,
    )
    .unwrap();
    ok(dir, &["synth", "--config", "planted.json", "--out", "d.wsconll"]);
}

#[test]
fn synth_train_infer_eval_pipeline() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    planted(dir);
    assert!(dir.join("d.wsconll.confusions.json").exists());
    fs::write(dir.join("c.json"), r#"{"epochs": 3, "backbone": {"kind": "log-linear", "hash_dim": 4096}}"#).unwrap();
    ok(dir, &["train", "--data", "d.wsconll", "--config", "c.json", "--out", "m.json"]);
    let csv = fs::read_to_string(dir.join("m.json.loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,mean_neg_loglik,wall_seconds");
    assert_eq!(lines.len(), 5);
    ok(dir, &["infer", "--model", "m.json", "--data", "d.wsconll", "--out", "p.txt"]);
    let table = ok(dir, &["eval", "--pred", "p.txt", "--gold", "d.wsconll", "--json", "e.json"]);
    assert!(table.starts_with("metric"));
    assert!(table.contains("token_accuracy"));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("e.json")).unwrap()).unwrap();
    for key in ["precision", "recall", "f1", "token_accuracy", "n_sentences", "n_gold_spans", "n_pred_spans"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    assert_eq!(metrics["n_sentences"], 150);

    let report = ok(
        dir,
        &["inspect-sources", "--model", "m.json", "--reference", "d.wsconll.confusions.json"],
    );
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["sources"]["src0"]["softmax"].as_array().unwrap().len(), 3);
    assert!(report["correlation"]["mean"].as_f64().unwrap() > 0.5);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    planted(dir);
    let args = |out: &'static str, threads: &'static str| {
        vec!["--threads", threads, "train", "--data", "d.wsconll", "--out", out, "--epochs", "2", "--seed", "9"]
    };
    ok(dir, &args("a.json", "1"));
    ok(dir, &args("b.json", "3"));
    assert_eq!(fs::read(dir.join("a.json")).unwrap(), fs::read(dir.join("b.json")).unwrap());
}

#[test]
fn ablation_flags_reach_the_trainer() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    planted(dir);
    ok(dir, &["train", "--data", "d.wsconll", "--out", "init.json", "--epochs", "0"]);
    ok(
        dir,
        &["train", "--data", "d.wsconll", "--out", "frozen.json", "--epochs", "2", "--freeze-source"],
    );
    let raw = |f: &str| {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(f)).unwrap()).unwrap();
        v["weak_matrices"].clone()
    };
    assert_eq!(raw("init.json"), raw("frozen.json"));
    ok(
        dir,
        &[
            "train", "--data", "d.wsconll", "--out", "x.json", "--epochs", "1", "--no-weak-transition",
            "--no-crf-transition", "--crf-scale", "0.5", "--emission-scale", "0.5", "--init-variant", "uniform_diag",
        ],
    );
}

#[test]
fn majority_vote_command() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("d.wsconll"),
        "#labels:\tO\tB-PER\tI-PER\n#sources:\ta\tb\tc\n#scheme:\tBIO\n\
         Ann\tB-PER\tB-PER\tB-PER\tO\nsaid\tO\tO\t_\t_\n\nhi\tO\t_\t_\t_\n",
    )
    .unwrap();
    ok(dir, &["mv", "--data", "d.wsconll", "--out", "mv.txt"]);
    assert_eq!(fs::read_to_string(dir.join("mv.txt")).unwrap(), "Ann\tB-PER\nsaid\tO\n\nhi\tO\n");
    let table = ok(dir, &["eval", "--pred", "mv.txt", "--gold", "d.wsconll"]);
    assert!(table.contains("1.0000"));
}

#[test]
fn selfcheck_prints_three_suites() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["selfcheck", "--n", "200", "--seed", "7"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert!(lines.iter().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    planted(dir);
    fs::write(dir.join("short.txt"), "w1\tL0\n").unwrap();
    let mismatch = run(dir, &["eval", "--pred", "short.txt", "--gold", "d.wsconll"]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("sentences"));

    assert_eq!(run(dir, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(dir, &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(
        run(dir, &["train", "--data", "d.wsconll", "--out", "m.json", "--batch-size", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(dir, &["train", "--data", "missing.wsconll", "--out", "m.json"]).status.code(),
        Some(1)
    );
    fs::write(dir.join("bad.wsconll"), "#labels:\tA\tB\n#sources:\ts\n#scheme:\tfree\nx\tA\n").unwrap();
    let bad = run(dir, &["mv", "--data", "bad.wsconll", "--out", "o.txt"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 4"));
    assert!(!dir.join("o.txt").exists());
    let unwritable = run(dir, &["mv", "--data", "d.wsconll", "--out", "no/such/dir/o.txt"]);
    assert_eq!(unwritable.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_accepts_explicit_configs() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "a.wsconll", "--sentences", "30", "--seed", "2"]);
    ok(dir, &["synth", "--out", "b.wsconll", "--sentences", "30", "--seed", "2"]);
    assert_eq!(fs::read(dir.join("a.wsconll")).unwrap(), fs::read(dir.join("b.wsconll")).unwrap());

    let explicit = r#"{
        "n_labels": 2, "n_sentences": 5, "min_len": 2, "max_len": 4,
        "initial": [0.5, 0.5],
        "transition": {"rows": 2, "cols": 2, "data": [0.9, 0.1, 0.1, 0.9]},
        "emission": {"rows": 2, "cols": 2, "data": [1.0, 0.0, 0.0, 1.0]},
        "confusions": [{"rows": 2, "cols": 2, "data": [1.0, 0.0, 0.0, 1.0]}],
        "missing_rates": [0.0],
        "seed": 1
    }"#;
    fs::write(dir.join("explicit.json"), explicit).unwrap();
    ok(dir, &["synth", "--config", "explicit.json", "--out", "e.wsconll", "--confusions", "e.json"]);
    let text = fs::read_to_string(dir.join("e.wsconll")).unwrap();
    for line in text.lines().skip(3).filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[1], cols[2], "identity confusion copies gold: {line}");
    }
}
