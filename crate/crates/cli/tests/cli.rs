use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use detfuse::config::RunConfig;
use detfuse::workflow::{RerankMode, Workspace};

fn detfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PERFECT: &str = "\
seed = 11
classes = cat, dog
detectors = a, b
images.train = 20
images.val = 20
images.test = 30
detector.a.skill = 1
detector.a.fp_rate = 0
detector.a.sigma = 0
detector.b.skill = 1
detector.b.fp_rate = 0
detector.b.sigma = 0
";

const NOISY: &str = "\
seed = 12
classes = cat, dog
detectors = a, b
images.train = 30
images.val = 30
images.test = 40
detector.a.skill = 0.8
detector.a.fp_rate = 0.5
detector.b.skill = 0.6
detector.b.fp_rate = 0.5
";

/// Simulates a small corpus into `dir` and returns the run config path.
fn simulated(dir: &Path, scenario: &str) -> String {
    let sc = dir.join("scenario.cfg");
    fs::write(&sc, scenario).unwrap();
    let out = dir.join("run");
    let o = detfuse(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("run.cfg").to_string_lossy().into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = detfuse(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

#[test]
fn help_and_version_exit_zero() {
    let o = detfuse(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["simulate", "calibrate", "featurize", "train", "rerank", "eval", "analyze", "bound"] {
        assert!(stdout(&o).contains(sub), "help lacks {sub}");
    }
    assert_eq!(detfuse(&["--version"]).status.code(), Some(0));
    let o = detfuse(&["rerank", "--help"]);
    assert!(stdout(&o).contains("--mode") && stdout(&o).contains("--set"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(detfuse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(detfuse(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(detfuse(&[]).status.code(), Some(1));
    assert_eq!(detfuse(&["eval", "--config", "x.cfg", "--set", "novalue"]).status.code(), Some(1));
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "detectors = a\nclasses = cat\nmanifest = nowhere.cfg\n").unwrap();
    let o = detfuse(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn malformed_records_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), NOISY);
    let dets = dir.path().join("run/train/detections.tsv");
    let mut text = fs::read_to_string(&dets).unwrap();
    text.push_str("train-00000\tcat\ta\t1\t2\tthree\t4\t0.5\n");
    fs::write(&dets, text).unwrap();
    let o = detfuse(&["calibrate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("detections.tsv"), "{}", stderr(&o));
}

#[test]
fn perfect_detectors_fail_calibration_as_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), PERFECT);
    let o = detfuse(&["calibrate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), PERFECT);
    let o = detfuse(&["calibrate", "--config", &cfg, "--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = detfuse(&["rerank", "--config", &cfg, "--mode", "naive-iv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cross_fold_violation_is_explained() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), PERFECT);
    let split = dir.path().join("run/split.cfg");
    let text = fs::read_to_string(&split).unwrap().replace("train.provenance = val", "train.provenance = train");
    fs::write(&split, text).unwrap();
    let o = detfuse(&["calibrate", "--config", &cfg]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("cross-fold"), "{}", stderr(&o));
}

#[test]
fn perfect_detector_eval_prints_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), PERFECT);
    ok(&["rerank", "--config", &cfg, "--mode", "baseline:a"]);
    let out = ok(&["eval", "--config", &cfg, "--mode", "baseline:a"]);
    assert!(out.contains("mAP (voc07-11point) = 1.0000"), "{out}");
}

#[test]
fn cli_matches_in_process_pipeline_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), NOISY);
    for step in ["calibrate", "featurize", "train"] {
        ok(&[step, "--config", &cfg]);
    }
    ok(&["rerank", "--config", &cfg, "--mode", "naive-i"]);
    ok(&["eval", "--config", &cfg, "--mode", "naive-i"]);
    ok(&["rerank", "--config", &cfg, "--mode", "learned"]);
    ok(&["analyze", "--config", &cfg, "--mode", "learned"]);
    let work = dir.path().join("run/work");
    let fused = fs::read(work.join("fused/naive-i.tsv")).unwrap();
    let report = fs::read(work.join("eval/naive-i/report.txt")).unwrap();

    // same steps in process
    let ws = Workspace::open(RunConfig::load(Path::new(&cfg), &[]).unwrap()).unwrap();
    let mode = RerankMode::parse("naive-i").unwrap();
    let (list, _) = ws.fuse(&mode).unwrap();
    let text = list.to_text(&ws.cfg.detectors, &ws.cfg.classes);
    assert_eq!(text.as_bytes(), &fused[..]);

    // rerun through the binary: byte-identical outputs and manifests
    let manifest = fs::read(work.join("manifests/rerank-naive-i.manifest")).unwrap();
    ok(&["rerank", "--config", &cfg, "--mode", "naive-i"]);
    ok(&["eval", "--config", &cfg, "--mode", "naive-i"]);
    assert_eq!(fs::read(work.join("fused/naive-i.tsv")).unwrap(), fused);
    assert_eq!(fs::read(work.join("eval/naive-i/report.txt")).unwrap(), report);
    assert_eq!(fs::read(work.join("manifests/rerank-naive-i.manifest")).unwrap(), manifest);
}

#[test]
fn overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulated(dir.path(), NOISY);
    ok(&["calibrate", "--config", &cfg, "--set", "work_dir=other"]);
    assert!(dir.path().join("run/other/calibration.tsv").exists());
    assert!(!dir.path().join("run/work").exists());
}
