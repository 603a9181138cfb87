use std::path::{Path, PathBuf};
use std::process::Command;

use concil::harness::generate_synthetic;
use concil::persistence::{write_bundle, Encoding};
use concil_cli::config::{resolve_config, DatasetConfig};
use concil_cli::runner::{checkpoint_dir, run_with_source, Split};
use concil_cli::{run_experiment, CliError, ExperimentConfig, RunOptions, TableSource};

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn desk(phases: usize) -> ExperimentConfig {
    let text = std::fs::read_to_string(repo_file("configs/desk.toml")).unwrap();
    let (cfg, diags) = resolve_config(&text, Path::new("."));
    assert_eq!(diags, vec![]);
    let mut cfg = cfg.unwrap();
    cfg.schedule.phases = phases;
    cfg
}

fn options(dir: &Path) -> RunOptions {
    RunOptions {
        output_dir: Some(dir.to_path_buf()),
        ..RunOptions::default()
    }
}

#[test]
fn two_phase_report_has_one_row_per_phase_learner_metric() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_experiment(&desk(2), &options(out.path())).unwrap();
    let metrics = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2 * 4);
    assert_eq!(summary.final_metrics.len(), 2);
    // Long format: 2 learners × (1 + 2) (phase, task) pairs × 2 kinds.
    let long = std::fs::read_to_string(out.path().join("accuracy.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 2 * 3 * 2);
    assert!(checkpoint_dir(out.path(), 2).join("concil.ckpt").is_file());
    assert!(out.path().join("config.toml").is_file());
}

#[test]
fn training_data_is_only_read_during_its_own_phase() {
    let cfg = desk(5);
    let mut source = TableSource::from_config(&cfg, Path::new(".")).unwrap();
    let out = tempfile::tempdir().unwrap();
    run_with_source(&cfg, &mut source, &options(out.path())).unwrap();
    let log = source.log();
    let train: Vec<_> = log.iter().filter(|e| e.split == Split::Train).collect();
    assert_eq!(train.len(), 5);
    for (t, e) in train.iter().enumerate() {
        assert_eq!((e.task, e.during_phase), (t, t));
    }
    assert!(log.iter().all(|e| e.task <= e.during_phase));
    assert_eq!(log.iter().filter(|e| e.split == Split::Test).count(), 1 + 2 + 3 + 4 + 5);
}

#[test]
fn bundle_and_synthetic_sources_agree() {
    let cfg = desk(3);
    let table = generate_synthetic(&cfg.dataset.synthetic_spec().unwrap()).unwrap();
    let data = tempfile::tempdir().unwrap();
    write_bundle(&table, data.path(), Encoding::Binary).unwrap();
    let mut bundled = cfg.clone();
    bundled.dataset = DatasetConfig::Bundle {
        path: data.path().to_path_buf(),
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, &options(a.path())).unwrap();
    run_experiment(&bundled, &options(b.path())).unwrap();
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn resume_rejects_a_different_config() {
    let cfg = desk(3);
    let first = tempfile::tempdir().unwrap();
    run_experiment(&cfg, &options(first.path())).unwrap();
    let mut changed = cfg.clone();
    changed.engine.lambda1 = 0.2;
    let second = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        resume_from: Some(checkpoint_dir(first.path(), 1)),
        ..options(second.path())
    };
    assert!(matches!(run_experiment(&changed, &opts), Err(CliError::Resume(_))));
}

#[test]
fn missing_output_dir_is_an_error() {
    let mut cfg = desk(2);
    cfg.output.dir = None;
    assert!(matches!(run_experiment(&cfg, &RunOptions::default()), Err(CliError::NoOutputDir)));
}

#[test]
fn binary_reports_failures_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(repo_file("configs/desk.toml")).unwrap().replace("phases = 5", "phases = 9");
    std::fs::write(&config, text).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_concil"))
        .args(["run", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    let json_start = stderr.find('{').unwrap();
    let report: serde_json::Value = serde_json::from_str(&stderr[json_start..]).unwrap();
    assert_eq!(report["status"], "error");
    assert_eq!(report["kind"], "invalid_config");
    assert_eq!(report["diagnostics"][0]["field"], "schedule");
}

#[test]
fn binary_validate_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_concil"))
        .args(["validate", "--config"])
        .arg(repo_file("configs/desk.toml"))
        .status()
        .unwrap();
    assert!(status.success());
    let output = Command::new(env!("CARGO_BIN_EXE_concil"))
        .args(["run", "--seed", "3", "--config"])
        .arg(repo_file("configs/desk.toml"))
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let echo = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(echo.contains("concept_seed = 4"));
}
