//! End-to-end checks of the binary: pipeline wiring, byte-level determinism,
//! config precedence, and machine-readable failures.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tailgcd"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn tailgcd");
    assert!(
        out.status.success(),
        "tailgcd {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().expect("stdout summary line");
    serde_json::from_str(line).expect("stdout summary is JSON")
}

fn synth(dir: &Path, seed: &str) {
    run_ok(&[
        "synth", "--classes", "5", "--dim", "8", "--imbalance", "3", "--head", "30", "--sigma",
        "0.3", "--seed", seed, "--out", dir.to_str().unwrap(),
    ]);
}

fn manifest(dir: &Path) -> String {
    dir.join("synth.manifest.json").to_str().unwrap().into()
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "7");

    let est = stdout_json(&run_ok(&[
        "estimate-k", "--manifest", &manifest(dir), "--out", dir.to_str().unwrap(),
    ]));
    let k_hat = est["k_hat"].as_u64().unwrap();
    let lower = est["lower"].as_u64().unwrap();
    let upper = est["upper"].as_u64().unwrap();
    assert!(lower <= k_hat && k_hat <= upper);
    let probes = fs::read_to_string(dir.join("probes.csv")).unwrap();
    assert!(probes.starts_with("k,labelled_acc\n"));
    assert!(probes.lines().count() >= 2, "probe rows recorded");

    let summary = stdout_json(&run_ok(&[
        "train", "--manifest", &manifest(dir), "--k-total", "5", "--epochs", "3", "--batch",
        "64", "--seed", "7", "--out", dir.to_str().unwrap(),
    ]));
    let acc = summary["acc_all"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let stats = fs::read_to_string(dir.join("stats.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = stats
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 3, "one stats row per epoch");
    for key in [
        "epoch", "loss_sup", "loss_unsup", "loss_prior", "loss_rep", "s_conf", "s_dens",
        "clamp_events",
    ] {
        assert!(rows[0].get(key).is_some(), "stats row carries {key}");
    }

    let eval = stdout_json(&run_ok(&[
        "eval", "--manifest", &manifest(dir), "--pred",
        dir.join("predictions.txt").to_str().unwrap(), "--out", dir.to_str().unwrap(),
    ]));
    // Scoring the run's own predictions reproduces its report.
    assert_eq!(eval["acc_all"], summary["acc_all"]);

    // Predicting the ground truth itself scores a perfect match.
    fs::copy(dir.join("synth.true_labels.txt"), dir.join("perfect.txt")).unwrap();
    let perfect = stdout_json(&run_ok(&[
        "eval", "--manifest", &manifest(dir), "--pred",
        dir.join("perfect.txt").to_str().unwrap(), "--out", dir.to_str().unwrap(),
    ]));
    assert_eq!(perfect["acc_all"].as_f64().unwrap(), 1.0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        synth(dir, "11");
        run_ok(&[
            "train", "--manifest", &manifest(dir), "--k-total", "5", "--epochs", "2", "--seed",
            "11", "--out", dir.to_str().unwrap(),
        ]);
    }
    for file in [
        "synth.data.bin", "synth.labels.txt", "synth.true_labels.txt", "stats.jsonl",
        "checkpoint.json", "predictions.txt", "selection.json", "report.json",
    ] {
        let lhs = fs::read(a.path().join(file)).unwrap();
        let rhs = fs::read(b.path().join(file)).unwrap();
        assert_eq!(lhs, rhs, "{file} differs between identical runs");
    }

    let c = TempDir::new().unwrap();
    synth(c.path(), "12");
    assert_ne!(
        fs::read(a.path().join("synth.data.bin")).unwrap(),
        fs::read(c.path().join("synth.data.bin")).unwrap(),
        "different seeds produce different data"
    );
}

#[test]
fn failures_emit_error_json_and_nonzero_exit() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_str().unwrap();

    let bad = bin()
        .args(["synth", "--imbalance", "0.5", "--out", dir])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&bad.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "invalid-param");
    assert!(err["error"]["message"].as_str().unwrap().contains("imbalance"));

    synth(tmp.path(), "3");
    let no_k = bin()
        .args(["train", "--manifest", &manifest(tmp.path()), "--out", dir])
        .output()
        .unwrap();
    assert!(!no_k.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&no_k.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "cli");
    assert!(err["error"]["message"].as_str().unwrap().contains("k-total"));
}

#[test]
fn config_supplies_defaults_and_flags_override() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "9");

    let config = dir.join("config.json");
    fs::write(&config, r#"{ "epochs": 2, "k_total": 5, "seed": 9 }"#).unwrap();

    run_ok(&[
        "train", "--manifest", &manifest(dir), "--config", config.to_str().unwrap(), "--out",
        dir.to_str().unwrap(),
    ]);
    let stats = fs::read_to_string(dir.join("stats.jsonl")).unwrap();
    assert_eq!(stats.lines().count(), 2, "epoch count came from the config");

    run_ok(&[
        "train", "--manifest", &manifest(dir), "--config", config.to_str().unwrap(),
        "--epochs", "4", "--out", dir.to_str().unwrap(),
    ]);
    let stats = fs::read_to_string(dir.join("stats.jsonl")).unwrap();
    assert_eq!(stats.lines().count(), 4, "explicit flag beat the config");
}
