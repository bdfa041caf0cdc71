//! Behavior tests for the command-line surface: artifacts, exit codes,
//! manifest contents.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taeclsa_core::store::Container;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taeclsa"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "taeclsa {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_dir(dir: &Path, per_class: usize, samples: usize, seed: u64) -> PathBuf {
    let data = dir.join(format!("data-{per_class}-{samples}-{seed}"));
    run_ok(&[
        "synth",
        "--per-class",
        &per_class.to_string(),
        "--samples",
        &samples.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn synth_writes_expected_records_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dir(dir.path(), 10, 64, 7);
    let n = std::fs::read_dir(&a).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ecg")
    }).count();
    assert_eq!(n, 50);

    let b = dir.path().join("again");
    run_ok(&["synth", "--per-class", "10", "--samples", "64", "--seed", "7", "--out", s(&b)]);
    assert_eq!(
        std::fs::read(a.join("records.csv")).unwrap(),
        std::fs::read(b.join("records.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("syn-HYP-0003.ecg")).unwrap(),
        std::fs::read(b.join("syn-HYP-0003.ecg")).unwrap()
    );
}

#[test]
fn synth_zero_per_class_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--per-class", "0", "--samples", "32", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["synth", "--per-class", "1", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_tae_emits_two_loss_csvs_and_default_latent_6() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 32, 3);
    let out_dir = dir.path().join("tae");
    run_ok(&["train-tae", "--data", s(&data), "--epochs", "3", "--seed", "3", "--out", s(&out_dir)]);

    let csvs: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.ends_with(".csv").then_some(name)
        })
        .collect();
    assert_eq!(csvs.len(), 2, "{csvs:?}");
    assert!(csvs.contains(&"tae_loss_batch1.csv".to_string()));
    assert!(csvs.contains(&"tae_loss_batch2.csv".to_string()));
    let body = std::fs::read_to_string(out_dir.join("tae_loss_batch1.csv")).unwrap();
    assert!(body.starts_with("epoch,train,val\n"));

    let c = Container::load(&out_dir.join("tae.taec")).unwrap();
    assert_eq!(c.config["latent_dim"].as_u64(), Some(6));
    assert_eq!(c.config["provenance"]["window"].as_u64(), Some(9));
}

#[test]
fn train_tae_rejects_even_window() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 32, 3);
    let out = run(&["train-tae", "--data", s(&data), "--window", "8", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_tae_missing_data_dir_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train-tae",
        "--data",
        s(&dir.path().join("nope")),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_flow_defaults_preserved_in_manifest_and_json_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 16, 5);
    let tae_out = dir.path().join("tae");
    run_ok(&["train-tae", "--data", s(&data), "--epochs", "2", "--seed", "5", "--out", s(&tae_out)]);

    // defaults: Table-2 widths live in the saved manifest even though this
    // desk run is tiny
    let clsa_out = dir.path().join("clsa");
    run_ok(&[
        "train-clsa",
        "--data", s(&data),
        "--tae", s(&tae_out.join("tae.taec")),
        "--epochs", "1",
        "--seed", "5",
        "--out", s(&clsa_out),
    ]);
    let c = Container::load(&clsa_out.join("pipeline.taec")).unwrap();
    assert_eq!(c.config["clsa"]["conv_filters"].as_u64(), Some(512));
    assert_eq!(c.config["clsa"]["lstm_units"].as_u64(), Some(256));
    assert_eq!(c.config["clsa"]["kernel_size"].as_u64(), Some(3));

    let curves = std::fs::read_to_string(clsa_out.join("clsa_curves.csv")).unwrap();
    let rows: Vec<&str> = curves.lines().collect();
    assert_eq!(rows[0], "epoch,train_loss,val_loss,train_acc,val_acc");
    assert_eq!(rows.len() - 1, 1); // exactly --epochs rows

    let json_path = dir.path().join("report.json");
    let out = run_ok(&[
        "evaluate",
        "--model", s(&clsa_out.join("pipeline.taec")),
        "--data", s(&data),
        "--split", "test",
        "--json", s(&json_path),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let header = stdout.lines().next().unwrap();
    let (si, pi, fi) = (
        header.find("Sensitivity").unwrap(),
        header.find("Precision").unwrap(),
        header.find("F1-score").unwrap(),
    );
    assert!(si < pi && pi < fi, "column order: {header}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let mut keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["accuracy", "macro_f1", "params", "per_class"]);
    let classes: Vec<&String> = report["per_class"].as_object().unwrap().keys().collect();
    assert_eq!(classes, ["CD", "HYP", "MI", "NORM", "STTC"]);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report["params"]["reduction_pct"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_clsa_same_seed_gives_identical_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 16, 9);
    let tae_out = dir.path().join("tae");
    run_ok(&["train-tae", "--data", s(&data), "--epochs", "2", "--seed", "9", "--out", s(&tae_out)]);
    let mut bytes = Vec::new();
    for run_idx in 0..2 {
        let out_dir = dir.path().join(format!("clsa{run_idx}"));
        run_ok(&[
            "train-clsa",
            "--data", s(&data),
            "--tae", s(&tae_out.join("tae.taec")),
            "--epochs", "1",
            "--conv-filters", "6",
            "--lstm-units", "5",
            "--seed", "9",
            "--out", s(&out_dir),
        ]);
        bytes.push(std::fs::read(out_dir.join("pipeline.taec")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn evaluate_missing_model_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 16, 2);
    let out = run(&[
        "evaluate",
        "--model", s(&dir.path().join("missing.taec")),
        "--data", s(&data),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_grids_have_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 16, 4);
    let out_dir = dir.path().join("abl");
    let fast = [
        "--epochs", "1",
        "--tae-epochs", "1",
        "--conv-filters", "5",
        "--lstm-units", "4",
        "--seed", "4",
    ];

    let count_rows = |name: &str| {
        let text = std::fs::read_to_string(out_dir.join(name)).unwrap();
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        assert!(lines[0].contains("param_count"), "{name}: {}", lines[0]);
        lines.len() - 1
    };

    let mut args = vec!["ablate", "--grid", "latent", "--data", s(&data), "--out", s(&out_dir)];
    args.extend_from_slice(&fast);
    run_ok(&args);
    assert_eq!(count_rows("latent.csv"), 5);

    let mut args = vec!["ablate", "--grid", "window", "--data", s(&data), "--out", s(&out_dir)];
    args.extend_from_slice(&fast);
    run_ok(&args);
    assert_eq!(count_rows("window.csv"), 4);

    let mut args = vec![
        "ablate", "--grid", "units", "--data", s(&data), "--out", s(&out_dir), "--width-scale", "64",
    ];
    args.extend_from_slice(&fast);
    run_ok(&args);
    assert_eq!(count_rows("units.csv"), 10);

    let mut args = vec!["ablate", "--grid", "tae", "--data", s(&data), "--out", s(&out_dir)];
    args.extend_from_slice(&fast);
    run_ok(&args);
    assert_eq!(count_rows("tae.csv"), 6);
}

#[test]
fn gradcheck_passes_at_default_and_fails_at_impossible_tolerance() {
    let out = run_ok(&["gradcheck", "--seed", "1", "--points", "3"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for op in [
        "dense", "conv1d", "batchnorm1d", "maxpool1d", "dropout", "lstm", "embedding",
        "softmax_rows", "self_attention", "self_attention_proj", "mse_loss", "cross_entropy",
        "clsa_end_to_end",
    ] {
        let occurrences = stdout
            .lines()
            .filter(|l| l.split_whitespace().nth(1) == Some(op))
            .count();
        assert_eq!(occurrences, 1, "op {op} listed {occurrences} times");
    }

    let out = run(&["gradcheck", "--tol", "1e-13", "--points", "2"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gradient check failed"), "{stderr}");
}

#[test]
fn config_file_applies_with_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dir(dir.path(), 10, 16, 6);
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"epochs": 2, "lr": 0.005, "conv_filters": 7, "lstm_units": 5}"#)
        .unwrap();
    let tae_out = dir.path().join("tae");
    run_ok(&[
        "train-tae",
        "--data", s(&data),
        "--config", s(&cfg_path),
        "--seed", "6",
        "--out", s(&tae_out),
    ]);
    // config epochs=2 applied
    let body = std::fs::read_to_string(tae_out.join("tae_loss_batch1.csv")).unwrap();
    assert_eq!(body.lines().count() - 1, 2);

    let clsa_out = dir.path().join("clsa");
    run_ok(&[
        "train-clsa",
        "--data", s(&data),
        "--tae", s(&tae_out.join("tae.taec")),
        "--config", s(&cfg_path),
        "--epochs", "1", // flag beats config
        "--seed", "6",
        "--out", s(&clsa_out),
    ]);
    let c = Container::load(&clsa_out.join("pipeline.taec")).unwrap();
    assert_eq!(c.config["clsa"]["conv_filters"].as_u64(), Some(7));
    let curves = std::fs::read_to_string(clsa_out.join("clsa_curves.csv")).unwrap();
    assert_eq!(curves.lines().count() - 1, 1);
}
