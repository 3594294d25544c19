use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embodiflow")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = "frames = 4\nsize = 16\ncard_size = 16\nseeds_per_cell = 4\nval_fraction = 0.25\ntest_fraction = 0.25\n\
enc_hidden = 8\nd_z = 4\nenc_heads = 2\ngen_hidden = 8\ngen_heads = 2\ndepth = 2\nadapter_depth = 2\n\
pretrain_steps = 20\npretrain_eval_every = 10\nsteps = 6\nlr = 1e-3\nvar_hidden = 8\nvar_fit_steps = 10\n\
sampler_steps = 3\nrecon_samples = 2\ntransfer_sources = 2\n";

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn config_error_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "frames = 8\n# comment\nsteps = many\n").unwrap();
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn missing_backbone_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`backbone`"), "{}", stderr(&out));
}

#[test]
fn extract_poses_on_synthetic_frames() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["extract-poses", "--out", d, "--frames", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["frames"], 3);
    assert!(Path::new(d).join("trajectory.txt").exists());
    // The written inputs reproduce the same trajectory.
    let again = run(&["extract-poses", "--out", d, "--input", dir.path().join("input").to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(json(&again)["residuals"], v["residuals"]);
}

#[test]
fn pipeline_gen_pretrain_train_eval_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    let sub = |n: &str| root.join(n).to_str().unwrap().to_string();

    let out = run(&["gen-data", "--config", cfg, "--out", &sub("data")]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json(&out)["samples"], 48);
    let data = format!("dataset={}", sub("data"));

    let out = run(&["pretrain-backbone", "--config", cfg, "--set", &data, "--out", &sub("bb")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let backbone = format!("backbone={}", json(&out)["backbone"].as_str().unwrap());

    let out = run(&["train", "--config", cfg, "--set", &data, "--set", &backbone, "--out", &sub("run")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["steps"], 6);
    let ckpt = v["checkpoint"].as_str().unwrap().to_string();
    let csv = std::fs::read_to_string(root.join("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let out = run(&["eval", "--checkpoint", &ckpt, "--no-generation", "--out", &sub("eval")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["trained_steps"], 6);
    assert!(v["disentanglement"]["cross_correlation"].as_f64().unwrap().is_finite());
    assert!(root.join("eval/projection.csv").exists());

    let card = root.join("card.pgm");
    let px: Vec<f64> = (0..256).map(|i| if (i / 16) % 4 < 2 && i % 16 > 4 && i % 16 < 11 { 0.8 } else { 0.0 }).collect();
    embodiflow::generator::write_pgm(&card, 16, 16, &px).unwrap();
    let source = root.join("data/samples/000000.bin");
    let out = run(&[
        "transfer",
        "--checkpoint",
        &ckpt,
        "--source",
        source.to_str().unwrap(),
        "--card",
        card.to_str().unwrap(),
        "--out",
        &sub("xfer"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json(&out)["files"].as_array().unwrap().len(), 4 + 2);
    assert!(root.join("xfer/frame_003.ppm").exists());
    let meta = std::fs::read_to_string(root.join("xfer/metadata.txt")).unwrap();
    assert!(meta.contains("card = "));
}

#[test]
fn resume_continues_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}checkpoint_every = 3\n")).unwrap();
    let cfg = cfg.to_str().unwrap();
    let sub = |n: &str| root.join(n).to_str().unwrap().to_string();
    let out = run(&["pretrain-backbone", "--config", cfg, "--out", &sub("bb")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let backbone = format!("backbone={}", json(&out)["backbone"].as_str().unwrap());
    let out = run(&["train", "--config", cfg, "--set", &backbone, "--out", &sub("full")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let full = std::fs::read_to_string(root.join("full/loss.csv")).unwrap();
    let mid = root.join("full/checkpoint_000003.bin");
    let out = run(&["train", "--config", cfg, "--set", &backbone, "--resume", mid.to_str().unwrap(), "--out", &sub("resumed")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let tail = std::fs::read_to_string(root.join("resumed/loss.csv")).unwrap();
    let full_rows: Vec<&str> = full.lines().skip(4).collect();
    let tail_rows: Vec<&str> = tail.lines().skip(1).collect();
    assert_eq!(full_rows, tail_rows);
}
