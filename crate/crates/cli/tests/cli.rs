//! End-to-end tests of the command-line pipeline, driving the compiled
//! binary the way a user would.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptbc"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ptbc_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_sorted(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn gen_motions_deterministic_and_guarded() {
    let dir = tmp_dir("gen");
    let out1 = dir.join("a");
    let status = bin()
        .args(["gen-motions", "--preset", "source", "--out"])
        .arg(&out1)
        .args(["--seed", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    let names = read_sorted(&out1);
    assert_eq!(names.len(), 9, "8 clips + manifest: {names:?}");
    assert!(names.contains(&"manifest.json".to_string()));

    // Same seed reproduces byte-identical files.
    let out2 = dir.join("b");
    assert!(bin()
        .args(["gen-motions", "--preset", "source", "--out"])
        .arg(&out2)
        .args(["--seed", "1"])
        .status()
        .unwrap()
        .success());
    for name in &names {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across identical seeds");
    }

    // Refuses to overwrite without --force.
    let status = bin()
        .args(["gen-motions", "--preset", "source", "--out"])
        .arg(&out1)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(bin()
        .args(["gen-motions", "--preset", "source", "--out"])
        .arg(&out1)
        .args(["--seed", "2", "--force"])
        .status()
        .unwrap()
        .success());

    // Aggressive preset includes the heavy lean family.
    let out3 = dir.join("c");
    assert!(bin()
        .args(["gen-motions", "--preset", "aggressive", "--out"])
        .arg(&out3)
        .status()
        .unwrap()
        .success());
    let manifest = std::fs::read_to_string(out3.join("manifest.json")).unwrap();
    assert!(manifest.contains("lean_a0.400"), "{manifest}");

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_preset_is_validation_error() {
    let dir = tmp_dir("badpreset");
    let status = bin()
        .args(["gen-motions", "--preset", "bogus", "--out"])
        .arg(dir.join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn curate_speed_halves_duration() {
    let dir = tmp_dir("curate");
    let src = dir.join("src");
    assert!(bin()
        .args(["gen-motions", "--preset", "source", "--out"])
        .arg(&src)
        .status()
        .unwrap()
        .success());
    let out = dir.join("out");
    let status = bin()
        .args(["curate", "--in"])
        .arg(&src)
        .arg("--out")
        .arg(&out)
        .args(["--speed", "2.0"])
        .status()
        .unwrap();
    assert!(status.success());
    // The first source clip runs 10 s at 50 fps → 250 frames after 2× speed.
    let names = read_sorted(&out);
    let first = names.iter().find(|n| n.starts_with("00_")).unwrap();
    let text = std::fs::read_to_string(out.join(first)).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["frames"].as_array().unwrap().len(), 250);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn print_config_lists_defaults() {
    let out = bin().arg("print-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in [
        "[model]",
        "[env.domain_rand]",
        "[reward.weights]",
        "[reward.adaptive]",
        "[ppo]",
        "[adapt]",
        "[sampler]",
        "[eval]",
        "n_envs = 256",
        "lambda_p",
        "desired_kl = 0.01",
        "parseval_s = 2.0",
        "tau = 0.12",
        "w_min = 0.1",
    ] {
        assert!(text.contains(key), "missing {key} in:\n{text}");
    }
}

#[test]
fn train_eval_adapt_verify_replay_pipeline() {
    let dir = tmp_dir("pipeline");
    let motions = dir.join("motions");
    assert!(bin()
        .args(["gen-motions", "--preset", "source", "--out"])
        .arg(&motions)
        .status()
        .unwrap()
        .success());

    // Tiny configuration so the whole pipeline runs in seconds.
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(
        &cfg_path,
        "[ppo]\nn_envs = 8\nsteps_per_env = 12\nn_experts = 2\nhidden = [16, 16]\nresidual_hidden = [16, 16]\niterations = 3\neval_every = 0\n\n[adapt]\niterations = 2\n\n[eval]\nepisodes_per_clip = 1\n",
    )
    .unwrap();

    let base = dir.join("base.json");
    let log = dir.join("train.jsonl");
    let status = bin()
        .args(["--config"])
        .arg(&cfg_path)
        .args(["train-base", "--motions"])
        .arg(&motions)
        .arg("--out")
        .arg(&base)
        .arg("--log")
        .arg(&log)
        .status()
        .unwrap();
    assert!(status.success());
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 3);
    for line in log_text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mean_reward"].is_number());
    }

    // Evaluation in an explicit failure-condition mode, CSV output.
    let report_csv = dir.join("report.csv");
    assert!(bin()
        .args(["--config"])
        .arg(&cfg_path)
        .args(["eval", "--ckpt"])
        .arg(&base)
        .arg("--motions")
        .arg(&motions)
        .args(["--mode", "eval_1p5m", "--format", "csv", "--out"])
        .arg(&report_csv)
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(&report_csv).unwrap();
    assert!(csv.starts_with("clip,episodes,succ_mean"));
    assert_eq!(csv.lines().count(), 1 + 8 + 1, "header + clips + aggregate");

    // Verify on a base checkpoint is a clean validation error (no residual).
    let status = bin().args(["verify", "--ckpt"]).arg(&base).status().unwrap();
    assert_eq!(status.code(), Some(1));

    // Adapt, then verify and replay.
    let adapted = dir.join("adapted.json");
    assert!(bin()
        .args(["--config"])
        .arg(&cfg_path)
        .args(["adapt", "--base"])
        .arg(&base)
        .arg("--motions")
        .arg(&motions)
        .arg("--out")
        .arg(&adapted)
        .status()
        .unwrap()
        .success());

    let vreport = dir.join("verify.json");
    assert!(bin()
        .args(["verify", "--ckpt"])
        .arg(&adapted)
        .args(["--states", "200", "--pairs", "500", "--out"])
        .arg(&vreport)
        .status()
        .unwrap()
        .success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&vreport).unwrap()).unwrap();
    assert_eq!(v["lipschitz"]["pass"], serde_json::Value::Bool(true));
    assert_eq!(v["residual_bound"]["pass"], serde_json::Value::Bool(true));

    let traj = dir.join("traj.csv");
    let clip_file = read_sorted(&motions).into_iter().find(|n| n.starts_with("00_")).unwrap();
    assert!(bin()
        .args(["replay", "--ckpt"])
        .arg(&adapted)
        .arg("--clip")
        .arg(motions.join(clip_file))
        .arg("--out")
        .arg(&traj)
        .status()
        .unwrap()
        .success());
    let traj_text = std::fs::read_to_string(&traj).unwrap();
    let header = traj_text.lines().next().unwrap();
    assert!(header.contains("q_ref0") && header.contains("w_track") && header.contains("r_balance"));
    assert!(traj_text.lines().count() > 5);

    // Determinism: re-running evaluation bytes-for-bytes.
    let report2 = dir.join("report2.csv");
    assert!(bin()
        .args(["--config"])
        .arg(&cfg_path)
        .args(["eval", "--ckpt"])
        .arg(&base)
        .arg("--motions")
        .arg(&motions)
        .args(["--mode", "eval_1p5m", "--format", "csv", "--out"])
        .arg(&report2)
        .status()
        .unwrap()
        .success());
    assert_eq!(std::fs::read(&report_csv).unwrap(), std::fs::read(&report2).unwrap());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_rejects_bad_mode() {
    let dir = tmp_dir("badmode");
    let status = bin()
        .args(["eval", "--ckpt", "/nonexistent", "--motions", "/nonexistent", "--mode", "warp"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_unknown_key_rejected() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[ppo]\nlearning_rate_typo = 0.1\n").unwrap();
    let status = bin().arg("--config").arg(&cfg).arg("print-config").status().unwrap();
    assert_eq!(status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}
