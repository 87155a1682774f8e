//! Black-box tests of the `gesture-rhythm` binary: a miniature pipeline run,
//! exit codes for broken inputs, and the synth subcommand.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> PathBuf {
    let mut path = PathBuf::from(env!("CARGO_BIN_EXE_gesture-rhythm"));
    assert!(path.exists(), "{path:?}");
    path = path.canonicalize().unwrap();
    path
}

fn write_desk_config(dir: &Path) -> PathBuf {
    let mut cfg = gesture_rhythm::config::Config::desk_scale(3);
    cfg.audio_encoder_steps = 30;
    cfg.lexicon_steps = 80;
    cfg.generator_steps = 80;
    cfg.interpreter_steps = 40;
    cfg.lexicon_size = 6;
    let path = dir.join("desk.toml");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn synth_then_full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let cfg = write_desk_config(dir.path());

    let synth = Command::new(bin())
        .args(["synth", "--out"])
        .arg(&data)
        .args(["--seed", "3", "--clips", "3", "--duration", "8", "--prototypes", "4"])
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    for stage in [
        "preprocess",
        "train-audio",
        "build-lexicon",
        "train-generator",
        "train-interpreters",
        "infer",
        "eval",
    ] {
        let status = Command::new(bin())
            .arg(stage)
            .arg("--config")
            .arg(&cfg)
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "stage {stage} failed");
    }
    assert!(out.join("eval/report.csv").exists());
    assert!(out.join("infer").read_dir().unwrap().next().is_some());
}

#[test]
fn missing_prerequisite_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let cfg = write_desk_config(dir.path());
    let status = Command::new(bin())
        .args(["synth", "--out"])
        .arg(&data)
        .args(["--clips", "2", "--duration", "6"])
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());

    let output = Command::new(bin())
        .arg("infer")
        .arg("--config")
        .arg(&cfg)
        .arg("--manifest")
        .arg(data.join("manifest.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, "d_min_s = 0.9\nd_max_s = 0.5\n").unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    // manifest never loads because the config fails first
    let output = Command::new(bin())
        .arg("preprocess")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--manifest")
        .arg(data.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("d_min_s"), "{err}");
}
