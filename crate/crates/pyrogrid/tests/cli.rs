//! End-to-end checks of the pyrogrid binary: exit codes, artifact layout,
//! and dataset determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pyrogrid"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pyrogrid")
}

fn tmpdir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pyrogrid-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn gen_small(out: &Path, seed: u64) {
    let st = run(&[
        "gen-data",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--weeks",
        "28",
        "--train-weeks",
        "20",
        "--val-weeks",
        "8",
    ]);
    assert!(st.status.success(), "gen-data failed: {st:?}");
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn gen_data_is_seed_deterministic() {
    let a = tmpdir("gen-a");
    let b = tmpdir("gen-b");
    let c = tmpdir("gen-c");
    gen_small(&a, 11);
    gen_small(&b, 11);
    gen_small(&c, 12);
    assert_eq!(read_all(&a), read_all(&b), "same seed, different bytes");
    assert_ne!(read_all(&a), read_all(&c), "different seed, same bytes");
}

#[test]
fn gen_data_rejects_oversized_split() {
    let d = tmpdir("gen-bad");
    let st = run(&[
        "gen-data",
        "--out",
        d.to_str().unwrap(),
        "--weeks",
        "20",
        "--train-weeks",
        "30",
        "--val-weeks",
        "10",
    ]);
    assert_eq!(st.status.code(), Some(3), "expected data-error exit");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let d = tmpdir("cfg-bad");
    let st = run(&[
        "train",
        "--config",
        "/nonexistent/cfg.json",
        "--data",
        d.to_str().unwrap(),
        "--out",
        d.join("out").to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2), "expected config-error exit");
}

#[test]
fn bad_thread_override_is_a_config_error() {
    let st = bin()
        .env("PYROGRID_THREADS", "0")
        .args(["report", "--run", "/tmp"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&st.stderr);
    assert!(msg.contains("PYROGRID_THREADS"), "stderr: {msg}");
}

#[test]
fn report_on_empty_dir_is_a_data_error() {
    let d = tmpdir("report-empty");
    let st = run(&["report", "--run", d.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(3));
}

#[test]
fn train_evaluate_predict_report_roundtrip() {
    let data = tmpdir("rt-data");
    gen_small(&data, 3);
    let train_out = tmpdir("rt-train");
    let st = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
        "--episodes",
        "1",
        "--seed",
        "1",
        "--no-exchange",
    ]);
    assert!(st.status.success(), "train failed: {st:?}");
    let ckpt = train_out.join("checkpoint_final.pgck");
    assert!(ckpt.exists());
    assert!(train_out.join("config.resolved.json").exists());
    assert!(train_out.join("train_log.csv").exists());

    let eval_out = tmpdir("rt-eval");
    let st = run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "evaluate failed: {st:?}");
    let csv = std::fs::read_to_string(eval_out.join("metrics.csv")).unwrap();
    assert!(csv.lines().count() > 1, "metrics.csv has no rows");

    // evaluate only serves the validation split
    let st = run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "train",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2));

    let pred_out = tmpdir("rt-pred");
    let st = run(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--week",
        "5",
        "--out",
        pred_out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "predict failed: {st:?}");
    // 3 agents x (1 reconstruction + 4 horizon maps)
    let pgms: Vec<_> = std::fs::read_dir(&pred_out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    assert_eq!(pgms.len(), 15);
    for p in &pgms {
        let bytes = std::fs::read(p).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"), "bad PGM header");
        assert_eq!(bytes.len(), "P5\n16 16\n255\n".len() + 256);
    }

    // predict past the horizon room is a data error
    let st = run(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--week",
        "27",
        "--out",
        pred_out.to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(3));

    // report merges the evaluate subrun
    let runs = tmpdir("rt-runs");
    std::fs::rename(&eval_out, runs.join("eval")).unwrap();
    let st = run(&["report", "--run", runs.to_str().unwrap()]);
    assert!(st.status.success(), "report failed: {st:?}");
    assert!(!st.stdout.is_empty());
}
