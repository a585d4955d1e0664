use std::path::Path;
use std::process::{Command, Output};

use srsplat_core::pipeline::TrainConfig;

const TINY: &str = "scene_gaussians = 6\ntrain_views = 3\ntest_views = 2\nlr_width = 12\nlr_height = 12\n\
                    sr_factor = 2\ninit_gaussians = 12\nstage1_iters = 12\nstage2_iters = 8\ndensify_start = 4\n\
                    densify_interval = 4\nstage1_densify_stop = 8\nstage2_densify_stop = 4\npatch_size = 12\n\
                    log_interval = 4\n";

fn srsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srsplat")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_documents_every_key_with_default() {
    let o = srsplat(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let defaults = TrainConfig::default();
    for k in TrainConfig::KEYS {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(k.name))
            .unwrap_or_else(|| panic!("--help lacks {}", k.name));
        assert!(line.contains(&defaults.get(k.name).unwrap()), "{line}");
    }
    for flag in ["--threads", "--seed", "--config", "--set"] {
        assert!(text.contains(flag), "--help lacks {flag}");
    }
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&srsplat(&["run", "--out", out, "--set", "ssim_beta=7"])), 1);
    assert_eq!(code(&srsplat(&["run", "--out", out, "--set", "no_such_key=1"])), 1);
    assert_eq!(code(&srsplat(&["run", "--out", out, "--config", "/nonexistent.toml"])), 1);
    assert_eq!(code(&srsplat(&["frobnicate"])), 1);
    assert_eq!(code(&srsplat(&["train-lr", "--data", "/nonexistent", "--out", out])), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "alpha = 1\nbeta = 2\n").unwrap();
    let o = srsplat(&["run", "--out", out, "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("alpha") && err.contains("beta"), "{err}");
    assert!(!Path::new(out).exists(), "validation failure must not write outputs");
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ply");
    std::fs::write(&junk, b"ply\nformat ascii 1.0\nend_header\n").unwrap();
    let o = srsplat(&["split", "--input", junk.to_str().unwrap(), "--output", "/tmp/x.ply"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stderr).unwrap().contains("byte"));
}

#[test]
fn staged_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let (data, run) = (p("data"), p("run"));
    let base = ["--config", cfg.as_str(), "--threads", "1"];
    let call = |args: &[&str]| {
        let o = srsplat(&[&base[..], args].concat());
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    call(&["synth", "--out", &data]);
    for f in ["truth.ply", "cameras_train.toml", "cameras_test.toml", "lr/000.png", "hr/002.png", "test/001.png"] {
        assert!(Path::new(&data).join(f).exists(), "{f}");
    }
    call(&["train-lr", "--data", &data, "--out", &run]);
    call(&["split", "--input", &p("run/checkpoints/stage1.ply"), "--output", &p("run/checkpoints/split.ply")]);
    call(&["train-hr", "--data", &data, "--out", &run]);
    let metrics = std::fs::read_to_string(p("run/metrics.csv")).unwrap();
    assert!(metrics.contains("stage1.loss") && metrics.contains("stage2.loss"));
    call(&["render", "--scene", &p("run/scene.ply"), "--cameras", &p("data/cameras_test.toml"), "--out", &p("r")]);
    assert!(Path::new(&p("r/001.png")).exists());
    let eval = call(&["eval", "--scene", &p("run/scene.ply"), "--data", &data]);
    assert!(eval.lines().any(|l| l.starts_with("mean,")), "{eval}");
    let manifest = std::fs::read_to_string(p("run/manifest.txt")).unwrap();
    assert!(manifest.contains("# scene.ply flag properties: none"));
}

#[test]
fn run_is_bitwise_reproducible_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    for out in ["a", "b"] {
        let o = srsplat(&["run", "--config", &cfg, "--threads", "1", "--seed", "5", "--out", &p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(p("a/metrics.csv")).unwrap();
    assert_eq!(a, std::fs::read(p("b/metrics.csv")).unwrap());
    let snapshot = std::fs::read_to_string(p("a/config.snapshot")).unwrap();
    assert!(snapshot.lines().any(|l| l.replace(' ', "") == "seed=5"), "{snapshot}");
    for f in srsplat::run::expected_artifacts(2) {
        assert!(Path::new(&p("a")).join(&f).exists(), "{}", f.display());
    }
}

#[test]
fn split_equivalence_experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = srsplat(&["experiment", "split-equivalence", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("lambda"));
}
