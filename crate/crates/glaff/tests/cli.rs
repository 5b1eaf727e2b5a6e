//! End-to-end exercises of the `glaff` binary: subcommand dispatch, exit
//! codes, artifact layout, and the byte-identical-rerun contract.

use std::path::Path;
use std::process::{Command, Output};

fn glaff(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glaff"))
        .args(args)
        .current_dir(dir)
        .env_remove("GLAFF_OUT_DIR")
        .output()
        .expect("binary should run")
}

fn tiny_cfg(dir: &Path) -> String {
    let cfg = "
seed = 7
threads = 1
[synth]
n = 400
channels = 2
[window]
history = 24
horizon = 8
[glaff]
dim = 8
dff = 16
heads = 2
layers = 1
[backbone]
kernel = 5
[train]
epochs = 2
batch = 16
";
    let path = dir.join("run.cfg");
    std::fs::write(&path, cfg).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = glaff(&[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = glaff(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = glaff(&["train", "--bogus", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = glaff(&["train", "--set", "no.such.key=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn runtime_errors_exit_1_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = glaff(
        &["train", "--data", "does-not-exist.csv", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: io:"), "got: {err}");

    // malformed csv → data category
    std::fs::write(dir.path().join("bad.csv"), "date,a\n2020-01-01,x\n").unwrap();
    let out = glaff(&["train", "--data", "bad.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: data:"), "got: {err}");
}

#[test]
fn synth_then_train_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = glaff(
        &["synth", "--n", "400", "--channels", "2", "--seed", "1", "--out", "d"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("d/synth.csv").exists());

    let cfg = tiny_cfg(dir.path());
    let out = glaff(
        &[
            "train",
            "--config",
            &cfg,
            "--data",
            "d/synth.csv",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run_dir = stdout
        .lines()
        .find_map(|l| l.strip_prefix("artifacts: "))
        .expect("artifacts line");
    for artifact in ["config.cfg", "model.ckpt", "metrics.jsonl", "curve.csv", "timing.csv"] {
        assert!(
            dir.path().join(run_dir).join(artifact).exists(),
            "missing {artifact}"
        );
    }

    // evaluate the checkpoint on the test split
    let ckpt = format!("{run_dir}/model.ckpt");
    let out = glaff(
        &[
            "evaluate",
            "--checkpoint",
            &ckpt,
            "--config",
            &cfg,
            "--data",
            "d/synth.csv",
            "--split",
            "test",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"mse\":"));
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(dir.path());
    for out_dir in ["a", "b"] {
        let out = glaff(
            &["train", "--config", &cfg, "--set", "seed=7", "--out", out_dir],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // same run id in both roots
    let find_run = |root: &str| {
        let mut entries = std::fs::read_dir(dir.path().join(root)).unwrap();
        entries.next().unwrap().unwrap().path()
    };
    let (ra, rb) = (find_run("a"), find_run("b"));
    for f in ["metrics.jsonl", "curve.csv", "model.ckpt"] {
        let a = std::fs::read(ra.join(f)).unwrap();
        let b = std::fs::read(rb.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }

    // a different seed must change the metrics
    let out = glaff(
        &["train", "--config", &cfg, "--set", "seed=8", "--out", "c"],
        dir.path(),
    );
    assert!(out.status.success());
    let rc = find_run("c");
    assert_ne!(
        std::fs::read(ra.join("metrics.jsonl")).unwrap(),
        std::fs::read(rc.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn config_snapshot_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(dir.path());
    let out = glaff(
        &["train", "--config", &cfg, "--set", "seed=3", "--out", "first"],
        dir.path(),
    );
    assert!(out.status.success());
    let run_dir = std::fs::read_dir(dir.path().join("first"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let snapshot = run_dir.join("config.cfg");
    // replay from the snapshot into a new root: metrics must match bytewise
    let out = glaff(
        &[
            "train",
            "--config",
            snapshot.to_str().unwrap(),
            "--out",
            "second",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = std::fs::read_dir(dir.path().join("second"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    assert_eq!(
        std::fs::read(run_dir.join("metrics.jsonl")).unwrap(),
        std::fs::read(second.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn ablate_writes_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(dir.path());
    let out = glaff(
        &[
            "ablate",
            "--config",
            &cfg,
            "--variants",
            "full,no_quantile",
            "--anomalies",
            "point:0.2:8",
            "--out",
            "abl",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = std::fs::read_dir(dir.path().join("abl"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let table = std::fs::read_to_string(run_dir.join("ablation.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("full mse") && header.contains("no_quantile mse"));
    assert!(table.contains("test_anomalous@8"));
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert!(metrics.lines().count() >= 4);
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = glaff(&["gradcheck", "--seed", "1234"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradcheck passed"));
}

#[test]
fn inject_writes_polluted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = glaff(
        &["synth", "--n", "600", "--channels", "2", "--seed", "4", "--out", "d"],
        dir.path(),
    );
    assert!(out.status.success());
    let out = glaff(
        &[
            "inject",
            "--data",
            "d/synth.csv",
            "--anomalies",
            "point:0.5:8:3",
            "--set",
            "window.history=48",
            "--set",
            "window.horizon=24",
            "--out",
            "inj",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let injected = std::fs::read_to_string(dir.path().join("inj/injected.csv")).unwrap();
    let original = std::fs::read_to_string(dir.path().join("d/synth.csv")).unwrap();
    assert_ne!(injected, original, "injection should change some points");
    assert_eq!(injected.lines().count(), original.lines().count());

    // rate 0 must be byte-identical
    let out = glaff(
        &[
            "inject",
            "--data",
            "d/synth.csv",
            "--anomalies",
            "point:0.0:8",
            "--set",
            "window.history=48",
            "--set",
            "window.horizon=24",
            "--out",
            "inj0",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("inj0/injected.csv")).unwrap(),
        original
    );
}

#[test]
fn env_out_dir_is_default_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_glaff"))
        .args(["synth", "--n", "400", "--channels", "1", "--seed", "2"])
        .current_dir(dir.path())
        .env("GLAFF_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("from-env/synth.csv").exists());
}
