//! Contract tests for the command-line surface: exit codes, determinism,
//! file layouts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dtl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dtl"))
}

fn run(args: &[&str]) -> Output {
    dtl().args(args).output().expect("spawn dtl")
}

fn assert_exit(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{context}: stdout={} stderr={}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_scene_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("scene.cfg");
    std::fs::write(
        &path,
        format!(
            "# tiny scene for tests\nwidth = 16\nheight = 16\nduration = 1\nwindow = 0.05\nseed = 3\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn write_train_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("train.cfg");
    std::fs::write(
        &path,
        format!(
            "epochs = 1\nbatch_size = 4\nlearning_rate = 0.02\ntrain_samples = 8\ntest_samples = 4\nteacher_epochs = 1\nteacher_samples = 8\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn simulate_into(dir: &Path) -> PathBuf {
    let scene = write_scene_config(dir, "");
    let out = dir.join("data");
    let output = run(&[
        "simulate",
        "--config",
        scene.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "simulate");
    out
}

fn strip_wall_clock(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("wall_clock_secs"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn simulate_writes_dataset_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let scene = write_scene_config(tmp.path(), "");
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let output = run(&[
            "simulate",
            "--config",
            scene.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&output, 0, "simulate");
        assert!(out.join("events.txt").exists());
        assert!(out.join("manifest.txt").exists());
        assert!(out.join("frames/sample_000000.intensity.pgm").exists());
    }
    let ev_a = std::fs::read(tmp.path().join("a/events.txt")).unwrap();
    let ev_b = std::fs::read(tmp.path().join("b/events.txt")).unwrap();
    assert_eq!(ev_a, ev_b, "event files must be byte-identical");

    let man_a = std::fs::read_to_string(tmp.path().join("a/manifest.txt")).unwrap();
    let man_b = std::fs::read_to_string(tmp.path().join("b/manifest.txt")).unwrap();
    assert_eq!(strip_wall_clock(&man_a), strip_wall_clock(&man_b));

    let frame_a = std::fs::read(tmp.path().join("a/frames/sample_000003.labels.pgm")).unwrap();
    let frame_b = std::fs::read(tmp.path().join("b/frames/sample_000003.labels.pgm")).unwrap();
    assert_eq!(frame_a, frame_b);
}

#[test]
fn malformed_config_key_is_exit_two_with_the_key_named() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("scene.cfg");
    std::fs::write(&path, "widht = 16\n").unwrap();
    let output = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&output, 2, "malformed key");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("widht"), "diagnostic must name the key: {stderr}");
}

#[test]
fn missing_input_directory_is_io_or_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_train_config(tmp.path(), "");
    let output = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&output, 3, "missing data dir");
}

#[test]
fn ce_arm_trains_without_teacher_but_full_arm_demands_one() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path());

    let ce_cfg = write_train_config(tmp.path(), "arm = ce\n");
    let out_ce = tmp.path().join("ce");
    let output = run(&[
        "train",
        "--config",
        ce_cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_ce.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "ce train");
    assert!(out_ce.join("student.ckpt").exists());
    assert!(out_ce.join("report.txt").exists());
    assert!(out_ce.join("metrics.csv").exists());
    assert!(out_ce.join("architecture.txt").exists());

    // resolved lambda defaults appear in the manifest
    let manifest = std::fs::read_to_string(out_ce.join("manifest.txt")).unwrap();
    for line in ["lambda1 = 1", "lambda2 = 1", "lambda3 = 0.1", "lambda4 = 1"] {
        assert!(manifest.contains(line), "manifest missing {line}: {manifest}");
    }

    let full_cfg = tmp.path().join("full.cfg");
    std::fs::write(
        &full_cfg,
        "epochs = 1\nbatch_size = 4\ntrain_samples = 8\ntest_samples = 4\narm = full\n",
    )
    .unwrap();
    let output = run(&[
        "train",
        "--config",
        full_cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("full").to_str().unwrap(),
    ]);
    assert_exit(&output, 5, "full train without teacher");
}

#[test]
fn teacher_then_full_train_then_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path());
    let cfg = write_train_config(tmp.path(), "arm = full\n");

    let teacher_out = tmp.path().join("teacher");
    let output = run(&[
        "train-teacher",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        teacher_out.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "train-teacher");
    let teacher_ckpt = teacher_out.join("teacher.ckpt");
    assert!(teacher_ckpt.exists());

    let train_out = tmp.path().join("student");
    let output = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--teacher",
        teacher_ckpt.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "full train");

    let eval_out = tmp.path().join("eval");
    let output = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        train_out.join("student.ckpt").to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "eval");
    let metrics = std::fs::read_to_string(eval_out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\nmiou,"));
}

#[test]
fn train_is_reproducible_across_runs() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path());
    let cfg = write_train_config(tmp.path(), "arm = ce+eit\nseed = 11\n");
    let mut checkpoints = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        let output = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&output, 0, "train");
        checkpoints.push(std::fs::read(out.join("student.ckpt")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1], "checkpoints must be byte-identical");
}

#[test]
fn embed_writes_deterministic_tensor_dump() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path());
    let cfg = write_train_config(tmp.path(), "representation = voxel\nbins = 4\n");
    let mut dumps = Vec::new();
    for name in ["e1", "e2"] {
        let out = tmp.path().join(name);
        let output = run(&[
            "embed",
            "--events",
            data.join("events.txt").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&output, 0, "embed");
        dumps.push(std::fs::read(out.join("tensors.bin")).unwrap());
    }
    assert_eq!(dumps[0], dumps[1]);
    assert_eq!(&dumps[0][..8], b"DTLTENS1");
}

#[test]
fn dump_writes_four_images_plus_manifest_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path());
    let cfg = write_train_config(tmp.path(), "arm = ce+eit\n");
    let train_out = tmp.path().join("student");
    let output = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert_exit(&output, 0, "train for dump");

    let mut bytes = Vec::new();
    for name in ["d1", "d2"] {
        let out = tmp.path().join(name);
        let output = run(&[
            "dump",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            train_out.join("student.ckpt").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--sample",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&output, 0, "dump");
        let mut all = Vec::new();
        for file in [
            "eel_penultimate.pgm",
            "eit_penultimate.pgm",
            "translated.pgm",
            "prediction.pgm",
        ] {
            let p = out.join(file);
            assert!(p.exists(), "missing {file}");
            all.extend(std::fs::read(&p).unwrap());
        }
        // the recorded scale maps the translated image back into (-1, 1)
        let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        let get = |key: &str| -> f64 {
            manifest
                .lines()
                .find(|l| l.starts_with(key))
                .and_then(|l| l.split('=').nth(1))
                .map(|v| v.trim().parse().unwrap())
                .unwrap_or_else(|| panic!("manifest missing {key}"))
        };
        let (lo, hi) = (get("translated_min"), get("translated_max"));
        assert!(lo >= -1.0 && hi <= 1.0 && lo <= hi, "scale ({lo}, {hi})");
        bytes.push(all);
    }
    assert_eq!(bytes[0], bytes[1], "dump outputs must be byte-identical");
}

#[test]
fn gradcheck_fault_fixture_fails_naming_tanh() {
    let output = run(&["gradcheck", "--seed", "5", "--inject-fault", "tanh"]);
    assert_exit(&output, 1, "fault injection");
    let all = format!(
        "{}{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(all.contains("tanh"), "failure must name tanh: {all}");
}

#[test]
fn gradcheck_is_deterministic_for_a_fixed_seed() {
    let a = run(&["gradcheck", "--seed", "7"]);
    let b = run(&["gradcheck", "--seed", "7"]);
    assert_exit(&a, 0, "gradcheck a");
    assert_eq!(a.stdout, b.stdout, "printed errors must be identical");
}

#[test]
fn ablate_rejects_too_few_seeds() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_train_config(tmp.path(), "");
    let output = run(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "0,1",
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&output, 2, "too few seeds");
}
