use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_utterscore"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "utterscore {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Synthesize and ingest a small corpus; returns the config path.
fn prepared(dir: &Path, sessions: &str) -> PathBuf {
    let d = dir.to_str().unwrap();
    let o = run(&["--seed", "3", "synth", "--sessions", sessions, "--teachers", "10", "--out", d]);
    let config = PathBuf::from(stdout(&o).trim());
    assert!(config.exists());
    run(&["--config", config.to_str().unwrap(), "ingest"]);
    config
}

#[test]
fn cv_reports_every_fold() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path(), "40");
    let o = run(&[
        "--config",
        config.to_str().unwrap(),
        "cv",
        "--feature-mode",
        "bow",
        "--dimension",
        "domain",
    ]);
    let text = stdout(&o);
    let folds = text
        .lines()
        .skip_while(|l| !l.trim_start().starts_with("fold"))
        .skip(1)
        .take_while(|l| l.split_whitespace().next().is_some_and(|t| t.parse::<usize>().is_ok()))
        .count();
    assert_eq!(folds, 5, "{text}");
    assert!(text.contains("mean"), "{text}");
    assert!(dir.path().join("work/reports/cv-bow-domain.json").exists());
}

#[test]
fn featurize_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path(), "20");
    let cfg = config.to_str().unwrap();
    let files = |tag: &str| {
        let w = dir.path().join(tag);
        run(&["--config", cfg, "--workdir", w.to_str().unwrap(), "ingest"]);
        run(&["--config", cfg, "--workdir", w.to_str().unwrap(), "featurize", "--feature-mode", "concat"]);
        let base = w.join("features/concat");
        ["utterances.csv", "sessions.csv"].map(|f| std::fs::read(base.join(f)).unwrap())
    };
    let a = files("w1");
    let b = files("w2");
    assert!(!a[0].is_empty());
    assert_eq!(a, b);
}

#[test]
fn explain_lists_top_and_bottom() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path(), "20");
    let cfg = config.to_str().unwrap();
    run(&["--config", cfg, "train", "--dimension", "domain"]);
    let o = run(&["--config", cfg, "explain", "--session", "s00", "--top", "4"]);
    let text = stdout(&o);
    let section = |name: &str| {
        text.lines()
            .skip_while(|l| *l != format!("{name}:"))
            .skip(1)
            .take_while(|l| l.starts_with("  "))
            .count()
    };
    assert_eq!(section("highest"), 4, "{text}");
    assert_eq!(section("lowest"), 4, "{text}");
    run(&["--config", cfg, "heatmap", "--session", "s00"]);
    let svg = std::fs::read_to_string(dir.path().join("work/heatmaps/s00-bow-domain.svg")).unwrap();
    assert!(svg.starts_with("<?xml"));
}

#[test]
fn invalid_config_names_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "protocol = \"infant\"\n[cv]\nk = 1\n[lasso]\nlambda = -2.0\n").unwrap();
    let o = bin()
        .args(["--config", path.to_str().unwrap(), "ingest"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["protocol", "cv.k", "lasso.lambda"] {
        assert!(err.contains(field), "{field} missing: {err}");
    }
}

#[test]
fn missing_input_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let o = bin()
        .args([
            "--workdir",
            dir.path().join("w").to_str().unwrap(),
            "ingest",
            "--transcripts",
            missing.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nowhere.csv"), "{err}");
    assert!(!dir.path().join("w").exists(), "nothing should be written on failure");
}
