//! End-to-end smoke tests driving the built binary.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmicl")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mmicl_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("build-data"));
    assert!(text.contains("inspect-tokens"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["build-data", "--out", "/tmp/x", "--not_a_flag", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not_a_flag"), "{err}");
}

#[test]
fn unknown_command_is_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_is_runtime_error() {
    let out = run(&[
        "train-tokenizers",
        "--data",
        "/nonexistent/nowhere",
        "--out",
        "/tmp/mmicl_cli_missing",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// build-data -> train-tokenizers -> train (50 steps) -> eval -> infer ->
/// inspect-tokens on a tiny configuration, well under the smoke budget.
#[test]
fn full_smoke_pipeline() {
    let started = Instant::now();
    let root = tmp("pipeline");
    let data_out = root.join("run");
    let tok_out = root.join("artifacts");
    let train_out = root.join("train");
    let eval_out = root.join("eval");

    let small: &[&str] = &[
        "--train_scenes",
        "60",
        "--val_scenes",
        "6",
        "--width",
        "16",
        "--height",
        "16",
        "--codebook_size",
        "16",
        "--bpe_merges",
        "40",
    ];

    let mut args = vec!["build-data", "--out", data_out.to_str().unwrap(), "--seed", "3"];
    args.extend_from_slice(small);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data_dir = data_out.join("data");
    assert!(data_dir.join("manifest.txt").exists());
    assert!(data_out.join("effective_config.txt").exists());

    let mut args = vec![
        "train-tokenizers",
        "--data",
        data_dir.to_str().unwrap(),
        "--out",
        tok_out.to_str().unwrap(),
        "--seed",
        "3",
    ];
    args.extend_from_slice(small);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["codebook.txt", "bpe.txt", "vocab.txt"] {
        assert!(tok_out.join(f).exists(), "missing {f}");
    }

    let model_flags: &[&str] = &[
        "--num_layers",
        "2",
        "--hidden_size",
        "32",
        "--num_heads",
        "4",
        "--moe_layer_indices",
        "1",
        "--num_experts",
        "2",
        "--top_k",
        "1",
        "--ffn_multiplier",
        "2",
        "--max_positions",
        "512",
        "--in_context_k",
        "1",
        "--caption_budget",
        "24",
    ];
    let mut args = vec![
        "train",
        "--data",
        data_dir.to_str().unwrap(),
        "--artifacts",
        tok_out.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
        "--seed",
        "3",
        "--epochs",
        "1",
        "--steps_per_epoch",
        "50",
        "--batch_size",
        "4",
        "--learning_rate",
        "0.002",
    ];
    args.extend_from_slice(small);
    args.extend_from_slice(model_flags);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let checkpoint = train_out.join("checkpoint.bin");
    assert!(checkpoint.exists());
    assert!(train_out.join("metrics.tsv").exists());
    assert!(train_out.join("expert_load.tsv").exists());
    let metrics = std::fs::read_to_string(train_out.join("metrics.tsv")).unwrap();
    assert!(metrics.lines().count() >= 51, "metrics lines: {}", metrics.lines().count());
    assert!(metrics.starts_with("step\ttask\tl_out\tl_aux\tgrad_norm\ttokens_per_s"));

    let mut args = vec![
        "eval",
        "--data",
        data_dir.to_str().unwrap(),
        "--artifacts",
        tok_out.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
        "--seed",
        "3",
        "--task",
        "all",
        "--eval_k",
        "1",
    ];
    args.extend_from_slice(small);
    args.extend_from_slice(model_flags);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(eval_out.join("report.tsv")).unwrap();
    assert!(report.starts_with("task\tk\tmetric\tvalue\tmalformed_rate\tn_items"));
    assert!(report.contains("segmentation\t1\tmiou"));
    assert!(report.contains("captioning\t1\tbleu4"));

    // infer and inspect-tokens on a class present in scene 0
    let manifest_scene = data_dir.join("scenes").join("scene_00000.txt");
    let scene_text = std::fs::read_to_string(manifest_scene).unwrap();
    let class_idx: usize = scene_text
        .lines()
        .find(|l| l.starts_with("object "))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|s| s.parse().ok())
        .unwrap();
    let classes = class_names();
    let class = classes[class_idx].as_str();

    let mut args = vec![
        "infer",
        "--data",
        data_dir.to_str().unwrap(),
        "--artifacts",
        tok_out.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--task",
        "segmentation",
        "--scene",
        "0",
        "--class",
        class,
        "--k",
        "1",
        "--seed",
        "3",
    ];
    args.extend_from_slice(small);
    args.extend_from_slice(model_flags);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("iou:"), "{text}");

    let mut args = vec![
        "inspect-tokens",
        "--data",
        data_dir.to_str().unwrap(),
        "--artifacts",
        tok_out.to_str().unwrap(),
        "--task",
        "captioning",
        "--scene",
        "0",
        "--class",
        class,
        "--k",
        "1",
        "--seed",
        "3",
    ];
    args.extend_from_slice(small);
    args.extend_from_slice(model_flags);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[BOI]"));
    assert!(text.contains("loss=1"));
    assert!(text.contains("bin_"));

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "smoke pipeline took {elapsed:.0}s, budget 300s");
    let _ = std::fs::remove_dir_all(&root);
    println!("PASS smoke pipeline in {elapsed:.0}s");
}

/// Re-running build-data with the same seed produces byte-identical files.
#[test]
fn rerun_byte_identical_outputs() {
    let a = tmp("rerun_a");
    let b = tmp("rerun_b");
    for dir in [&a, &b] {
        let out = run(&[
            "build-data",
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            "9",
            "--train_scenes",
            "6",
            "--val_scenes",
            "2",
            "--width",
            "16",
            "--height",
            "16",
        ]);
        assert!(out.status.success());
    }
    let fa = std::fs::read(a.join("data/scenes/scene_00003.txt")).unwrap();
    let fb = std::fs::read(b.join("data/scenes/scene_00003.txt")).unwrap();
    assert_eq!(fa, fb);
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}

fn class_names() -> Vec<String> {
    let mut names = Vec::new();
    for color in ["red", "green", "blue", "yellow"] {
        for shape in ["square", "circle", "triangle"] {
            names.push(format!("{color} {shape}"));
        }
    }
    names
}

