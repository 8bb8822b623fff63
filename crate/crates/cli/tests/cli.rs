use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    std::env::var_os("QAS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn qas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qas"))
        .args(args)
        .env("QAS_DATA_DIR", data_dir())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&qas(&[])), 1);
    assert_eq!(code(&qas(&["search", "--profile", "huge"])), 1);
    assert_eq!(code(&qas(&["--help"])), 0);
}

#[test]
fn missing_config_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let missing = dir.path().join("nope.toml");
    let out = qas(&["search", "--config", s(&missing), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.toml"));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "profile = \"desk\"\ncontroler_hidden = 3\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = qas(&["search", "--config", s(&cfg), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("controler_hidden"),
        "{}",
        stderr(&out)
    );
    assert!(!out_dir.exists());
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_qas"))
        .args(["search", "--profile", "desk", "--out-dir", s(&out_dir)])
        .args(["--data-dir", s(&dir.path().join("empty"))])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!out_dir.exists());
}

#[test]
fn eval_requires_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("bare.qc");
    fs::write(&arch, "qubits 8\n0 0 0 Ry\n0 1 0 CNOT\n").unwrap();
    let out = qas(&["eval", s(&arch), "--profile", "desk"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no parameters"));

    fs::write(&arch, "qubits 8\n0 0 0 Rq 1.0\n").unwrap();
    assert_eq!(code(&qas(&["eval", s(&arch), "--profile", "desk"])), 1);
}

#[test]
fn desk_search_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "profile = \"desk\"\nmax_epochs = 3\nseed = 2\n").unwrap();
    let run = dir.path().join("run");

    let out = qas(&["search", "--config", s(&cfg), "--out-dir", s(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in [
        "manifest.json",
        "metrics.jsonl",
        "checkpoint.json",
        "best.qc",
        "summary.json",
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["episodes"], 3);
    assert_eq!(summary["seed"], 2);
    let test_acc = summary["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&test_acc));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let kinds: Vec<String> = metrics
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "\"episode\"").count(), 3);
    assert_eq!(kinds.last().unwrap(), "\"final\"");

    // reusing the directory needs --resume; a finished run resumes to the same result
    assert_eq!(
        code(&qas(&["search", "--config", s(&cfg), "--out-dir", s(&run)])),
        1
    );
    let out = qas(&[
        "search",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&run),
        "--resume",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let again: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(again["test_accuracy"], summary["test_accuracy"]);
    assert_eq!(again["architecture"], summary["architecture"]);

    let exported = dir.path().join("best.qc");
    let out = qas(&["export", "--out-dir", s(&run), "--output", s(&exported)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&exported).unwrap(),
        fs::read_to_string(run.join("best.qc")).unwrap()
    );

    let out = qas(&["eval", s(&exported), "--split", "test", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.contains(&format!("{test_acc:.4}")), "{printed}");

    let train_dir = dir.path().join("train");
    let out = qas(&[
        "train",
        s(&exported),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&train_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(train_dir.join("trained.qc").is_file());
    assert!(train_dir.join("metrics.jsonl").is_file());
}

#[test]
fn export_without_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&qas(&["export", "--out-dir", s(dir.path())])), 1);
}
