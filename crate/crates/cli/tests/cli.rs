use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use dit::diffcore::TensorFile;

fn dit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn train_tiny(dir: &Path, steps: &str) -> PathBuf {
    ok(&[
        "train",
        "--steps",
        steps,
        "--batch-size",
        "4",
        "--seed",
        "3",
        "--out",
        s(dir),
    ]);
    dir.join("final.ditt")
}

#[test]
fn flops_xl2_matches_published_total() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let json = ok(&[
        "flops",
        "--model",
        "XL/2",
        "--image-size",
        "256",
        "--format",
        "json",
        "--out",
        s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let g = v["gflops"].as_f64().unwrap();
    assert!((g - 118.64).abs() / 118.64 < 0.01, "{g}");
    assert!(out.join("flops.json").exists());
    assert_eq!(manifest(&out)["status"], "ok");

    let csv = ok(&[
        "flops",
        "--model",
        "XL/2",
        "--variant",
        "cross-attention",
        "--format",
        "csv",
        "--out",
        s(&tmp.path().join("c")),
    ]);
    let total: f64 = csv
        .lines()
        .find(|l| l.starts_with("total,"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - 137.62).abs() / 137.62 < 0.01, "{total}");
}

#[test]
fn conformance_passes_every_row() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["conformance", "--out", s(tmp.path())]);
    assert!(stdout.contains("all 20 rows PASS"));
    let csv = fs::read_to_string(tmp.path().join("conformance.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",PASS")));
}

#[test]
fn unguided_sampling_uses_one_evaluation_per_step_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(&tmp.path().join("t"), "2");
    for (scale, per) in [("1.0", 1), ("3.0", 2)] {
        let out = tmp.path().join(format!("s{scale}"));
        ok(&[
            "sample",
            "--ckpt",
            s(&ckpt),
            "--class",
            "0,3",
            "--cfg-scale",
            scale,
            "--steps",
            "5",
            "--count",
            "3",
            "--out",
            s(&out),
        ]);
        let file = TensorFile::load(out.join("samples.ditt")).unwrap();
        let meta: serde_json::Value = serde_json::from_str(&file.metadata).unwrap();
        assert_eq!(meta["network_evaluations"], 3 * 5 * per);
        assert_eq!(meta["labels"], serde_json::json!([0, 3, 0]));
        assert_eq!(file.get::<f32>("samples").unwrap().shape(), &[3, 8, 8, 2]);
        assert!(out.join("samples.ppm").exists());
    }
}

#[test]
fn manifest_reruns_reproduce_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    train_tiny(&first, "4");
    let second = tmp.path().join("b");
    ok(&[
        "train",
        "--config",
        s(&first.join("manifest.json")),
        "--out",
        s(&second),
    ]);
    let read = |d: &Path| fs::read(d.join("final.ditt")).unwrap();
    assert_eq!(read(&first), read(&second));

    let ckpt = first.join("final.ditt");
    let s1 = tmp.path().join("s1");
    ok(&[
        "sample",
        "--ckpt",
        s(&ckpt),
        "--class",
        "1",
        "--steps",
        "6",
        "--count",
        "2",
        "--seed",
        "9",
        "--out",
        s(&s1),
    ]);
    let s2 = tmp.path().join("s2");
    ok(&[
        "sample",
        "--config",
        s(&s1.join("manifest.json")),
        "--out",
        s(&s2),
    ]);
    let samples = |d: &Path| fs::read(d.join("samples.ditt")).unwrap();
    assert_eq!(samples(&s1), samples(&s2));

    let s3 = tmp.path().join("s3");
    ok(&[
        "sample",
        "--config",
        s(&s1.join("manifest.json")),
        "--seed",
        "10",
        "--out",
        s(&s3),
    ]);
    assert_ne!(samples(&s1), samples(&s3));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let tmp = tempfile::tempdir().unwrap();
    let straight = train_tiny(&tmp.path().join("full"), "6");
    let half = train_tiny(&tmp.path().join("half"), "3");
    let resumed = tmp.path().join("resumed");
    ok(&[
        "train",
        "--resume",
        s(&half),
        "--steps",
        "6",
        "--out",
        s(&resumed),
    ]);
    assert_eq!(
        fs::read(straight).unwrap(),
        fs::read(resumed.join("final.ditt")).unwrap()
    );
    let log = fs::read_to_string(resumed.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
}

#[test]
fn flags_beat_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[schedule]\nsteps = 5\n").unwrap();
    let a = tmp.path().join("a");
    ok(&["schedule", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(
        fs::read_to_string(a.join("schedule.csv"))
            .unwrap()
            .lines()
            .count(),
        6
    );
    let b = tmp.path().join("b");
    ok(&[
        "schedule",
        "--config",
        s(&cfg),
        "--steps",
        "3",
        "--out",
        s(&b),
    ]);
    assert_eq!(
        fs::read_to_string(b.join("schedule.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    assert_eq!(manifest(&b)["config"]["schedule"]["steps"], 3);
}

#[test]
fn runs_land_under_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_dit"))
        .args(["schedule", "--steps", "2"])
        .env("DIT_RUNS_DIR", tmp.path())
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let dirs: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1);
    assert!(s(&dirs[0]).ends_with("-schedule"));
    assert!(dirs[0].join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_nonzero_with_a_remedy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let r = dit(&["sample", "--out", s(&out)]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("--ckpt") && err.contains("hint:"), "{err}");
    assert!(manifest(&out)["status"]
        .as_str()
        .unwrap()
        .contains("no checkpoint"));

    let r = dit(&["flops", "--model", "Q/3", "--out", s(&tmp.path().join("y"))]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("hint:"));

    let r = dit(&["train", "--no-such-flag"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn sweep_writes_csv_and_skips_missing_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(&tmp.path().join("t"), "2");
    let out = tmp.path().join("sweep");
    let grid = format!("tiny={}", s(&ckpt));
    ok(&[
        "sweep",
        "--grid",
        &grid,
        "--grid",
        "gone=/nonexistent.ditt",
        "--steps-list",
        "2,4",
        "--count",
        "16",
        "--reference-count",
        "200",
        "--out",
        s(&out),
    ]);
    let records = dit::eval::read_sweep_csv(out.join("sweep.csv")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records[..2]
        .iter()
        .all(|r| r.status == "ok" && r.metric.is_some()));
    assert!(records[2..].iter().all(|r| r.status.starts_with("skipped")));
    let plot: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("plot.json")).unwrap()).unwrap();
    assert_eq!(plot["series"].as_array().unwrap().len(), 1);
}
