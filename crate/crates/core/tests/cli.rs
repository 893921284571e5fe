use std::path::Path;
use std::process::{Command, Output};

use strucgrad::cli::{Checkpoint, CHECKPOINT_MAGIC};
use strucgrad::trainer::{read_metrics_csv, METRICS_COLUMNS};

fn strucgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strucgrad")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    strucgrad(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mlc_config(dir: &Path, t_outer: usize, eta: f64) -> std::path::PathBuf {
    let path = dir.join(format!("mlc_{t_outer}_{eta}.json"));
    let text = serde_json::json!({
        "version": 1,
        "task": "mlc",
        "model": {"infer_hidden": [8], "feature_hidden": [6], "feature_dim": 4, "global_hidden": 4},
        "data": {"synth": {"synth": {"n_labels": 4, "n_features": 6, "n_examples": 120, "seed": 3}, "split": [0.7, 0.15, 0.15]}},
        "train": {
            "t_inner": 2, "t_outer": t_outer, "eta_inner": eta, "eta_outer": eta, "lambda": 1.0,
            "primary": {"kind": "ssvm"}, "batch_size": 16, "seed": 1, "eval_every": 2
        }
    });
    std::fs::write(&path, text.to_string()).unwrap();
    path
}

const CONLL: &str = "-DOCSTART- -X- O\n\nEU NNP B-ORG\nrejects VBZ O\nGerman JJ B-MISC\ncall NN O\n\nPeter NNP B-PER\nBlackburn NNP I-PER\n\nBRUSSELS NNP B-LOC\n1996-08-22 CD O\n";

#[test]
fn synth_is_deterministic_and_validates_its_spec() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for f in [&a, &b] {
        assert_eq!(code(&["synth", "--L", "8", "--d", "16", "--N", "2000", "--seed", "7", "--out", p(f)]), 0);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert!(text.starts_with("2000 16 8\n"));
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(code(&["synth", "--L", "0", "--d", "16", "--N", "10", "--out", p(&dir.path().join("c.txt"))]), 2);
    assert_eq!(code(&["synth", "--L", "8", "--d", "16", "--N", "10", "--out", p(&a)]), 2);
    assert_eq!(code(&["synth", "--L", "8", "--d", "16", "--N", "10", "--out", p(&a), "--force"]), 0);
}

#[test]
fn train_writes_hashed_outputs_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mlc_config(dir.path(), 6, 0.2);
    let out = dir.path().join("run");
    let first = strucgrad(&["train", "--config", p(&cfg), "--out", p(&out), "--regime", "alternating"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let hash = summary["config_sha256"].as_str().unwrap().to_string();
    assert_eq!(summary["regime"], "alternating");
    assert_eq!(summary["theta_updates"], 12);
    assert!(summary["wall_seconds"].as_f64().unwrap() >= 0.0);

    let (metrics_hash, rows) = read_metrics_csv(&std::fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(metrics_hash, hash);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == METRICS_COLUMNS.len()));

    let bytes = std::fs::read(out.join("model.ckpt")).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.descriptor.config_sha256, hash);

    assert_eq!(code(&["train", "--config", p(&cfg), "--out", p(&out)]), 2);
    assert_eq!(code(&["train", "--config", p(&cfg), "--out", p(&out), "--force"]), 0);
    // A different seed is a different configuration.
    let out2 = dir.path().join("run2");
    assert_eq!(code(&["train", "--config", p(&cfg), "--out", p(&out2), "--seed", "9"]), 0);
    let s2: serde_json::Value = serde_json::from_slice(&std::fs::read(out2.join("summary.json")).unwrap()).unwrap();
    assert_ne!(s2["config_sha256"].as_str().unwrap(), hash);
    assert_eq!(s2["seed"], 9);
}

#[test]
fn configuration_errors_exit_2_before_creating_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&["train", "--config", p(&missing), "--out", p(&out)]), 2);
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(mlc_config(dir.path(), 3, 0.1)).unwrap().replace("\"version\":1", "\"version\":7");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(code(&["train", "--config", p(&bad), "--out", p(&out)]), 2);
    let unknown = dir.path().join("unknown.json");
    let text = std::fs::read_to_string(mlc_config(dir.path(), 3, 0.1)).unwrap().replace("\"seed\":1", "\"seed\":1,\"sede\":2");
    std::fs::write(&unknown, text).unwrap();
    assert_eq!(code(&["train", "--config", p(&unknown), "--out", p(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn divergence_exits_3_with_diagnostics_and_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mlc_config(dir.path(), 50, 1e12);
    let text = std::fs::read_to_string(&cfg).unwrap();
    let text = text
        .replace(r#"{"kind":"ssvm"}"#, r#"{"kind":"cd","negatives":5,"temperature":1.0}"#)
        .replace(r#""eval_every":2"#, r#""eval_every":2,"patience":null"#);
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("boom");
    let res = strucgrad(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["error"].as_str().unwrap().contains("non-finite"));
    assert!(diag["outer_iter"].as_u64().unwrap() >= 1);
    assert!(read_metrics_csv(&std::fs::read_to_string(out.join("metrics.csv")).unwrap()).is_ok());
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn eval_and_analyze_hessian_read_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mlc_config(dir.path(), 4, 0.2);
    let out = dir.path().join("run");
    assert_eq!(code(&["train", "--config", p(&cfg), "--out", p(&out)]), 0);
    let data = dir.path().join("data.txt");
    assert_eq!(code(&["synth", "--L", "4", "--d", "6", "--N", "50", "--seed", "3", "--out", p(&data)]), 0);
    let ckpt = out.join("model.ckpt");

    let res = strucgrad(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data)]);
    assert!(res.status.success());
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let f1 = v["scores"]["multi_label"]["example_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let an = dir.path().join("analysis");
    let res = strucgrad(&["analyze-hessian", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&an)]);
    assert!(res.status.success());
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(v["fd_max_abs_error"].as_f64().unwrap() < 1e-4);
    let hessian = std::fs::read_to_string(an.join("hessian.csv")).unwrap();
    assert_eq!(hessian.lines().count(), 4);

    let wrong = dir.path().join("wrong.txt");
    assert_eq!(code(&["synth", "--L", "5", "--d", "6", "--N", "10", "--out", p(&wrong)]), 0);
    assert_eq!(code(&["eval", "--checkpoint", p(&ckpt), "--data", p(&wrong)]), 2);
    assert_eq!(code(&["eval", "--checkpoint", p(&data), "--data", p(&data)]), 2);
}

#[test]
fn sequence_task_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.conll"), CONLL).unwrap();
    std::fs::write(dir.path().join("test.conll"), "Peter NNP B-PER\nrejects VBZ O\nParis NNP B-LOC\n").unwrap();
    let cfg = dir.path().join("seq.json");
    let text = serde_json::json!({
        "version": 1,
        "task": "seq",
        "model": {"embed_dim": 4, "infer_hidden": [6], "feature_hidden": [], "feature_dim": 3},
        "data": {"files": {"train": "train.conll", "valid": "train.conll", "test": "test.conll"}},
        "train": {
            "t_inner": 3, "t_outer": 10, "eta_inner": 0.5, "eta_outer": 0.1, "lambda": 0.5,
            "primary": {"kind": "cd", "negatives": 2, "temperature": 0.5}, "batch_size": 2, "seed": 0
        }
    });
    std::fs::write(&cfg, text.to_string()).unwrap();
    let out = dir.path().join("seqrun");
    let res = strucgrad(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["test"]["sequence"]["token_accuracy"].as_f64().is_some());
    let ckpt = out.join("model.ckpt");
    let res = strucgrad(&["eval", "--checkpoint", p(&ckpt), "--data", p(&dir.path().join("test.conll"))]);
    assert!(res.status.success());
    assert_eq!(code(&["analyze-hessian", "--checkpoint", p(&ckpt), "--data", p(&dir.path().join("test.conll"))]), 2);
}

#[test]
fn gradcheck_passes_and_tolerance_overrides() {
    let res = strucgrad(&["gradcheck"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 20);
    assert_eq!(code(&["gradcheck", "--tolerance", "0"]), 1);
    assert_eq!(code(&["gradcheck", "--tolerance", "-1"]), 2);
}

#[test]
fn thread_count_must_be_positive() {
    let res = Command::new(env!("CARGO_BIN_EXE_strucgrad")).arg("gradcheck").env("STRUCGRAD_THREADS", "0").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let res = Command::new(env!("CARGO_BIN_EXE_strucgrad")).arg("gradcheck").env("STRUCGRAD_THREADS", "2").output().unwrap();
    assert_eq!(res.status.code(), Some(0));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["nope"]), 2);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--config", "x.json", "--regime", "sideways"]), 2);
}
