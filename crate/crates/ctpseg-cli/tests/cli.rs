//! End-to-end CLI tests against the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctpseg"))
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Recursive (path, bytes) listing for byte-exact tree comparison.
fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for e in entries {
            if e.is_dir() {
                stack.push(e);
            } else {
                let rel = e.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, fs::read(&e).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn write_config(path: &Path, manifest: &Path, run_dir: &Path, extra_train: &str) {
    let text = format!(
        r#"{{
  "seed": 3,
  "run_dir": {run_dir:?},
  "model": {{
    "architecture": "pspnet",
    "bins": [1, 2],
    "backbone_channels": [4, 6, 8],
    "n_psp": 2,
    "head_channels": 4,
    "input_size": [16, 16]
  }},
  "data": {{
    "manifest": {manifest:?},
    "folds": 2,
    "augment": {{ "enabled": false }}
  }},
  "train": {{ "batch_size": 4, "max_epochs": 2{extra_train} }}
}}
"#,
        run_dir = run_dir.display().to_string(),
        manifest = manifest.display().to_string(),
    );
    fs::write(path, text).unwrap();
}

fn synth_dataset(dir: &Path, subjects: u32, seed: u64) {
    let out = bin()
        .args(["synth", "--out"])
        .arg(dir)
        .args(["--subjects", &subjects.to_string(), "--seed", &seed.to_string()])
        .args(["--size", "16", "16"])
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn synth_is_deterministic_and_validates_args() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_dataset(&a, 3, 7);
    synth_dataset(&b, 3, 7);
    assert_eq!(tree_bytes(&a), tree_bytes(&b), "same seed must give identical trees");

    let out = bin()
        .args(["synth", "--out"])
        .arg(tmp.path().join("zero"))
        .args(["--subjects", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "zero subjects is an argument error");
}

#[test]
fn synth_default_size_is_64() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ds");
    let out = bin()
        .args(["synth", "--out"])
        .arg(&dir)
        .args(["--subjects", "1", "--seed", "1"])
        .output()
        .unwrap();
    ok(&out);
    let meta: serde_json::Value = serde_json::from_slice(
        &fs::read(
            fs::read_dir(&dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .find(|p| p.is_dir())
                .unwrap()
                .join("meta.json"),
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(meta["shape"][1], 64);
    assert_eq!(meta["shape"][2], 64);
}

#[test]
fn cv_train_predict_eval_ensemble_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth_dataset(&ds, 4, 11);
    let manifest = ds.join("manifest.csv");
    let truth_before = tree_bytes(&ds);

    let run_dir = tmp.path().join("run");
    let cfg_path = tmp.path().join("exp.json");
    write_config(&cfg_path, &manifest, &run_dir, "");

    let out = bin().args(["cv", "--config"]).arg(&cfg_path).output().unwrap();
    ok(&out);

    // One checkpoint pair per fold plus the combined report.
    for fold in 0..2 {
        assert!(run_dir.join(format!("fold{fold}/best.ckpt")).exists());
        assert!(run_dir.join(format!("fold{fold}/train_log.csv")).exists());
        assert!(run_dir.join(format!("fold{fold}/metrics.csv")).exists());
    }
    let report = fs::read_to_string(run_dir.join("report.md")).unwrap();
    assert!(report.contains("Total (mean over folds)"));
    assert!(report.contains("±"), "totals are formatted as m ± s");

    // The dataset was not mutated.
    assert_eq!(truth_before, tree_bytes(&ds), "cv must not touch its inputs");

    // Predict: masks contain only bytes 0 and 1.
    let preds = tmp.path().join("preds");
    let out = bin()
        .args(["predict", "--checkpoint"])
        .arg(run_dir.join("fold0/best.ckpt"))
        .arg("--data")
        .arg(&manifest)
        .arg("--out")
        .arg(&preds)
        .output()
        .unwrap();
    ok(&out);
    let mut saw_masks = 0;
    for entry in fs::read_dir(&preds).unwrap() {
        let mask = entry.unwrap().path().join("mask.raw");
        let bytes = fs::read(&mask).unwrap();
        assert!(bytes.iter().all(|&b| b <= 1), "mask bytes must be 0x00/0x01");
        saw_masks += 1;
    }
    assert!(saw_masks > 0);

    // Eval of the truth against itself: every DSC is 1.
    let eval_dir = tmp.path().join("eval_self");
    let out = bin()
        .args(["eval", "--pred"])
        .arg(&ds)
        .arg("--truth")
        .arg(&manifest)
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap();
    ok(&out);
    let csv = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let dsc = line.split(',').nth(1).unwrap();
        assert_eq!(dsc, "1", "self-evaluation row: {line}");
    }

    // Ensemble with both fold checkpoints.
    let ens = tmp.path().join("ens");
    let out = bin()
        .args(["ensemble", "--checkpoints"])
        .arg(run_dir.join("fold0/best.ckpt"))
        .arg(run_dir.join("fold1/best.ckpt"))
        .arg("--data")
        .arg(&manifest)
        .arg("--out")
        .arg(&ens)
        .output()
        .unwrap();
    ok(&out);
    assert!(ens.join("sub000_scan00/mask.raw").exists());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth_dataset(&ds, 3, 21);
    let manifest = ds.join("manifest.csv");

    let run_a = tmp.path().join("run_a");
    let cfg_path = tmp.path().join("exp.json");
    write_config(&cfg_path, &manifest, &run_a, "");
    // Override the seed on the command line; the echo must capture it.
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .args(["--fold", "0", "--seed", "17"])
        .output()
        .unwrap();
    ok(&out);

    // Feed the echoed config back, redirected to a fresh run dir.
    let run_b = tmp.path().join("run_b");
    let out = bin()
        .args(["train", "--config"])
        .arg(run_a.join("config.json"))
        .args(["--fold", "0"])
        .arg("--run-dir")
        .arg(&run_b)
        .output()
        .unwrap();
    ok(&out);

    let log_a = fs::read_to_string(run_a.join("fold0/train_log.csv")).unwrap();
    let log_b = fs::read_to_string(run_b.join("fold0/train_log.csv")).unwrap();
    assert_eq!(log_a, log_b, "echoed config must reproduce the identical run");
    assert_eq!(
        fs::read(run_a.join("fold0/best.ckpt")).unwrap(),
        fs::read(run_b.join("fold0/best.ckpt")).unwrap()
    );
}

#[test]
fn finetune_runs_both_phases() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth_dataset(&ds, 4, 31);
    let manifest = ds.join("manifest.csv");

    let pre_run = tmp.path().join("pre");
    let cfg_path = tmp.path().join("exp.json");
    write_config(&cfg_path, &manifest, &pre_run, "");
    let out =
        bin().args(["train", "--config"]).arg(&cfg_path).args(["--fold", "0"]).output().unwrap();
    ok(&out);

    let ft_run = tmp.path().join("ft");
    let ft_cfg = tmp.path().join("ft.json");
    let pretrained = pre_run.join("fold0/best.ckpt");
    write_config(
        &ft_cfg,
        &manifest,
        &ft_run,
        &format!(
            r#", "fine_tune": {{ "pretrained": {:?}, "phase1_epochs": 2 }}"#,
            pretrained.display().to_string()
        ),
    );
    let out = bin()
        .args(["finetune", "--config"])
        .arg(&ft_cfg)
        .args(["--fold", "0"])
        .output()
        .unwrap();
    ok(&out);

    let log = fs::read_to_string(ft_run.join("fold0/train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 1 + 2 + 2, "2 phase-1 epochs + 2 phase-2 epochs");
    assert!(lines[1].ends_with("0.01"), "phase 1 at 1e-2: {}", lines[1]);
    assert!(lines[3].ends_with("0.0001"), "phase 2 at 1e-4: {}", lines[3]);
}

#[test]
fn missing_checkpoint_exits_one_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth_dataset(&ds, 2, 41);
    let out = bin()
        .args(["predict", "--checkpoint", "/nonexistent/model.ckpt", "--data"])
        .arg(ds.join("manifest.csv"))
        .arg("--out")
        .arg(tmp.path().join("p"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/model.ckpt"), "stderr: {stderr}");
}

#[test]
fn unknown_config_keys_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "no_such_key": 5}"#).unwrap();
    let out = bin().args(["cv", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_schema_prints_reference() {
    let out = bin().arg("config-schema").output().unwrap();
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("# Experiment config reference"));
    assert!(text.contains("train.loss.kind"));
    assert!(text.contains("\"architecture\": \"pspnet\""));
}
