//! End-to-end determinism: the full pipeline, seeded, must produce
//! byte-identical artifacts on every run, whatever the thread count.

use std::path::Path;
use std::process::Command;

fn mimo(dir: &Path, threads: &str, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_mimo"))
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .args(args)
        .status()
        .expect("binary runs");
    assert!(status.success(), "mimo {args:?} failed");
}

/// One full pipeline pass: dataset -> metrics -> thresholds -> score ->
/// second model -> robustness.
fn pipeline(dir: &Path, threads: &str) {
    mimo(dir, threads, &[
        "synth-dataset", "--out", "ds", "--n", "4", "--m", "3", "--side", "24", "--seed", "9",
    ]);
    mimo(dir, threads, &[
        "compute-metrics", "ds/manifest.json", "--out", "model-a.csv",
    ]);
    mimo(dir, threads, &[
        "thresholds", "model-a.csv", "--out", "thresholds.json", "--seed", "9",
    ]);
    mimo(dir, threads, &[
        "score", "model-a.csv", "--thresholds", "thresholds.json",
        "--out", "score.json", "--pass-fail", "pass_fail.csv", "--seed", "9",
    ]);
    mimo(dir, threads, &[
        "synth-table", "--out", "model-b.csv", "--n", "4", "--m", "3", "--seed", "5",
    ]);
    mimo(dir, threads, &[
        "robustness", "model-a.csv", "model-b.csv", "--out", "robustness.json",
        "--trials-inner", "10", "--trials-outer", "4",
        "--bootstrap-samples", "200", "--seed", "9",
    ]);
}

#[test]
fn criterion_9_end_to_end_determinism() {
    let root = tempfile::tempdir().unwrap();
    let serial = root.path().join("serial");
    let parallel = root.path().join("parallel");
    std::fs::create_dir_all(serial.join("ds")).unwrap();
    std::fs::create_dir_all(parallel.join("ds")).unwrap();
    pipeline(&serial, "1");
    pipeline(&parallel, "8");

    let artifacts = [
        "ds/manifest.json",
        "model-a.csv",
        "thresholds.json",
        "score.json",
        "pass_fail.csv",
        "model-b.csv",
        "robustness.json",
    ];
    for name in artifacts {
        let a = std::fs::read(serial.join(name)).unwrap();
        let b = std::fs::read(parallel.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
        assert!(!a.is_empty(), "{name} is empty");
    }
    // And the volumes themselves.
    for entry in std::fs::read_dir(serial.join("ds")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(serial.join("ds").join(&name)).unwrap();
        let b = std::fs::read(parallel.join("ds").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between runs");
    }
    println!("criterion 9 (end-to-end determinism, serial vs 8 threads, byte-identical): pass");
}
