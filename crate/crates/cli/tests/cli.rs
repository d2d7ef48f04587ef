use std::path::Path;
use std::process::Command;

use dilseg::CliError;
use dilseg::commands::{Run, Selection, ablation_variants, cmd_ablate, cmd_report, cmd_train, run_pipeline};
use dilseg::config::{AblationGrid, ExperimentConfig, Overrides};

fn tiny_config(out: &Path) -> ExperimentConfig {
    let json = r#"{
        "seed": 11,
        "phantom_cases": 4,
        "phantom": {"dims": [32, 32, 8], "gland_semi_axes_mm": [8.0, 7.0, 9.0], "gland_jitter_mm": 1.0,
                    "lesion_count": [1, 1], "lesion_median_cc": 0.15, "lesion_volume_range_cc": [0.1, 0.25],
                    "lesion_radius_range_mm": [1.5, 6.0]},
        "preprocess": {"crop_size": [32, 32], "normalization": "z_score"},
        "network": {"base_width": 4},
        "train": {"folds": 2, "max_epochs": 1}
    }"#;
    let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
    cfg.resolve(&Overrides { out: Some(out.to_path_buf()), ..Default::default() }).unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, tiny_config(dir).to_pretty_json()).unwrap();
    path
}

fn dilseg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dilseg")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn binary_runs_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("runs");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    for stage in ["phantom", "preprocess", "train", "predict", "evaluate", "report"] {
        let r = dilseg(&["--config", c, "--out", o, stage]);
        assert!(r.status.success(), "{stage}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let run_dir = tiny_config(&out).run_dir();
    let hash = tiny_config(&out).hash();
    for file in [
        "config.json",
        "folds.json",
        "train/fold0/model.safetensors",
        "train/fold1/train_log.csv",
        "predictions/cv/index.json",
        "evaluation/cv/evaluation.json",
        "report/table.csv",
        "report/groups.csv",
        "report/figures/dsc_by_gleason.svg",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let table = std::fs::read_to_string(run_dir.join("report/table.csv")).unwrap();
    assert!(table.lines().next().unwrap().ends_with(&hash));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report/report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], hash.as_str());
    // one model: nothing to compare
    assert!(report.get("pairwise").is_none());
    assert!(!run_dir.join("report/pairwise.csv").exists());
    let svg = std::fs::read_to_string(run_dir.join("report/figures/dsc_by_zone.svg")).unwrap();
    assert!(svg.starts_with("<!-- dilseg") && svg.contains(&hash));
}

#[test]
fn help_lists_commands_and_flags() {
    let r = dilseg(&["--help"]);
    let text = String::from_utf8_lossy(&r.stdout);
    for word in ["phantom", "preprocess", "train", "predict", "evaluate", "report", "ablate", "--config", "--seed", "--out", "--fold", "--arch", "--device"] {
        assert!(text.contains(word), "help lacks {word}");
    }
}

#[test]
fn unsupported_device_and_missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let c = cfg.to_str().unwrap();
    let o = dir.path().join("runs");
    let o = o.to_str().unwrap();
    let r = dilseg(&["--config", c, "--out", o, "--device", "cuda", "train"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("cpu"));
    let r = dilseg(&["--config", c, "--out", o, "train"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("run `preprocess` first"));
    let r = dilseg(&["--config", c, "--out", o, "--fold", "x", "train"]);
    assert!(!r.status.success());
}

#[test]
fn library_reports_missing_upstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::new(tiny_config(dir.path())).unwrap();
    match cmd_train(&run, Selection::Pooled) {
        Err(CliError::MissingArtifact { command, .. }) => assert_eq!(command, "preprocess"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
}

#[test]
fn two_model_report_has_pairwise_tests() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny_config(&dir.path().join("a"));
    let mut b = a.clone();
    b.name = Some("MRRN_DS_b".into());
    b.train.seed = 12;
    b.output_dir = Some(dir.path().join("b"));
    let (run_a, _, _) = run_pipeline(a, Selection::Pooled).unwrap();
    let (run_b, _, _) = run_pipeline(b, Selection::Pooled).unwrap();
    let evals = [run_a.evaluation_dir(Selection::Pooled), run_b.evaluation_dir(Selection::Pooled)];
    let report_dir = cmd_report(&run_a, Selection::Pooled, &evals).unwrap();
    let pairwise = std::fs::read_to_string(report_dir.join("pairwise.csv")).unwrap();
    let rows: Vec<&str> = pairwise.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("MRRN_DS,MRRN_DS_b,"));
    // the same evaluation twice is rejected: model names must differ
    assert!(cmd_report(&run_a, Selection::Pooled, &[evals[0].clone(), evals[0].clone()]).is_err());
}

#[test]
fn single_point_ablation_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.ablation = AblationGrid { supervision_levels: vec![], mu: vec![cfg.train.mu], stream_ablations: vec![] };
    let variants = ablation_variants(&cfg);
    assert_eq!(variants.len(), 1);
    // the ablation grid is part of the config, so compare against the variant config itself
    assert_eq!(variants[0].2.hash(), cfg.hash());

    let run = Run::new(cfg.clone()).unwrap();
    let rows = cmd_ablate(&run, Selection::Pooled).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].config_hash, cfg.hash());
    let ablated_log = std::fs::read(run.dir.join("train/pooled/train_log.csv")).unwrap();

    let other = tempfile::tempdir().unwrap();
    let (plain, _, _) = run_pipeline(ExperimentConfig { output_dir: Some(other.path().to_path_buf()), ..cfg }, Selection::Pooled).unwrap();
    assert_eq!(std::fs::read(plain.dir.join("train/pooled/train_log.csv")).unwrap(), ablated_log);
    let table = std::fs::read_to_string(run.dir.join("ablation/summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, sa, _) = run_pipeline(tiny_config(a.path()), Selection::CrossValidation).unwrap();
    let (rb, sb, _) = run_pipeline(tiny_config(b.path()), Selection::CrossValidation).unwrap();
    assert_eq!(sa.len(), 2);
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(x.first_batch_loss.to_bits(), y.first_batch_loss.to_bits());
        assert_eq!(x.val_cases, y.val_cases);
    }
    for file in ["evaluation/cv/summary.csv", "train/fold0/train_log.csv", "folds.json", "config.json"] {
        assert_eq!(std::fs::read(ra.dir.join(file)).unwrap(), std::fs::read(rb.dir.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn prostatex_manifest_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = Run::new(cfg).unwrap();
    dilseg::commands::cmd_phantom(&run).unwrap();
    // the phantom layout uses the same file names as the adapter expects
    let out = dir.path().join("m.json");
    let r = dilseg(&["manifest", run.dir.join("phantom").to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let cases = dilseg_core::manifest::load_manifest(&out).unwrap().into_result().unwrap();
    assert_eq!(cases.len(), 4);
}
