//! The `btn` binary end to end on tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

#[rustfmt::skip]
const TINY: &[&str] = &[
    "--set", "model.image_size=8",
    "--set", "model.level_channels=[4,4,8]",
    "--set", "model.level_sizes=[4,2,1]",
    "--set", "model.norm_groups=2",
    "--set", "model.fuse_heads=2",
    "--set", "model.mla_heads=2",
    "--set", "model.vit_dim=8",
    "--set", "model.vit_heads=2",
    "--set", "model.vit_depth=1",
    "--set", "data.n_train=12",
    "--set", "data.n_val=6",
    "--set", "train.batch_size=4",
];

fn btn(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btn"))
        .args(args)
        .env("BTN_OUTPUT_ROOT", root)
        .output()
        .expect("spawn btn")
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "stdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn gen_data_writes_a_dataset_and_refuses_to_overwrite() {
    let root = tempfile::tempdir().unwrap();
    let args = [
        "gen-data", "--n", "9", "--size", "16", "--noise", "0.3", "--seed", "4",
    ];
    ok(btn(root.path(), &args));
    let dir = root.path().join("data");
    let labels = std::fs::read_to_string(dir.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 10);
    assert!(dir.join("00000.ppm").exists() && dir.join("manifest.json").exists());
    assert!(!btn(root.path(), &args).status.success());
    ok(btn(root.path(), &[&args[..], &["--force"]].concat()));
}

#[test]
fn train_evaluate_and_inspect() {
    let root = tempfile::tempdir().unwrap();
    let run = root.path().join("run");
    let run_s = run.to_str().unwrap();
    let stdout = ok(btn(
        root.path(),
        &with_tiny(&["train", "--out", run_s, "--epochs", "1", "--lambda", "0.5"]),
    ));
    assert!(stdout.contains("epoch   1 val"), "{stdout}");
    for f in [
        "metrics.csv",
        "best.ckpt",
        "last.ckpt",
        "config.json",
        "manifest.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }

    // resuming under the stored config extends the same run
    ok(btn(
        root.path(),
        &["train", "--out", run_s, "--resume", "--epochs", "2"],
    ));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);

    let ckpt = run.join("best.ckpt");
    let report = ok(btn(
        root.path(),
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap()],
    ));
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["samples"], 6);
    assert!((0.0..=1.0).contains(&v["mean_acc"].as_f64().unwrap()));

    ok(btn(
        root.path(),
        &[
            "inspect",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--heatmaps",
            "2",
        ],
    ));
    let out = root.path().join("inspect");
    let predictions = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 7);
    assert!(out.join("heatmaps").read_dir().unwrap().count() > 0);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let root = tempfile::tempdir().unwrap();
    let args = with_tiny(&[
        "ablate",
        "--axis",
        "components",
        "--seeds",
        "1",
        "--set",
        "train.epochs=1",
    ]);
    let stdout = ok(btn(root.path(), &args));
    assert!(stdout.contains("mla_bt"));
    let csv = std::fs::read_to_string(root.path().join("ablate-components/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn bad_input_fails_with_a_message() {
    let root = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--set", "train.nonsense=1"][..],
        &["ablate", "--axis", "sideways"],
        &["evaluate", "--checkpoint", "/nonexistent.ckpt"],
        &["train", "--resume"],
    ] {
        let out = btn(root.path(), args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}
