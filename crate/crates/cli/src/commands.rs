//! The experiment commands.
//!
//! Every command works inside `output_root/<config_hash>/`:
//!
//! ```text
//! config.json
//! phantom/                 synthetic dataset and its manifest
//! preprocessed/<case>/     resampled, cropped volumes plus sidecar
//! folds.json
//! train/<fold>/            model weights, training log, summary
//! predictions/<selection>/ probability maps and masks on the original grid
//! evaluation/<selection>/  per-case and dataset evaluation
//! report/                  tables, statistics and figures
//! ablation/                consolidated ablation table
//! ```
//!
//! A selection names which trained models are used: `cv` (each case by the
//! model of its own fold), `fold<k>` (the held-out cases of one fold) or
//! `pooled` (one model trained on every case).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dilseg_core::evaluation::{CaseEvaluation, DatasetSummary, LesionScore, dataset_table_csv, evaluate_case, summarize_dataset};
use dilseg_core::manifest::{CaseManifest, load_manifest, save_manifest};
use dilseg_core::phantom::generate_dataset;
use dilseg_core::preprocess::{PreprocessedCase, load_preprocessed, preprocess_case, save_preprocessed};
use dilseg_core::stats::{ModelEvaluations, build_report};
use dilseg_core::volumes::{load_label_volume, load_scalar_volume, save_volume};
use dilseg_nn::folds::{FoldAssignment, folds_for_cases};
use dilseg_nn::networks::{Ablation, Architecture, Network, count_parameters, load_checkpoint, read_checkpoint_meta};
use dilseg_nn::predict::{binarize, predict_case};
use dilseg_nn::train::{StopReason, log_csv, train_model};
use serde::{Deserialize, Serialize};

use crate::artifacts::{Stamp, ensure_dir, read_json, read_stamped, relative, write_csv, write_json, write_svg};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::figures::grouped_bar_chart;

/// Which models a train/predict/evaluate invocation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Every fold of the cross-validation.
    CrossValidation,
    /// One fold: train on the others, predict its held-out cases.
    Fold(usize),
    /// No hold-out: train on every case and predict every case.
    Pooled,
}

impl Selection {
    pub fn parse(s: Option<&str>) -> Result<Self> {
        match s {
            None => Ok(Selection::CrossValidation),
            Some("none") | Some("pooled") => Ok(Selection::Pooled),
            Some(v) => v
                .parse()
                .map(Selection::Fold)
                .map_err(|_| CliError::Config(format!("--fold expects an index or \"none\", got {v:?}"))),
        }
    }

    pub fn dir_name(self) -> String {
        match self {
            Selection::CrossValidation => "cv".into(),
            Selection::Fold(k) => format!("fold{k}"),
            Selection::Pooled => "pooled".into(),
        }
    }
}

/// Resolved run directory and stamp for a config.
pub struct Run {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub stamp: Stamp,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let hash = config.hash();
        let root = config.output_root();
        // manifests store paths relative to themselves, which needs absolute inputs
        let root = std::path::absolute(&root).map_err(|e| CliError::io(&root, e))?;
        let dir = root.join(&hash);
        ensure_dir(&dir)?;
        let run = Run { config, dir, stamp: Stamp::new(hash) };
        write_json(&run.dir.join("config.json"), &run.config_value(), &run.stamp)?;
        Ok(run)
    }

    fn config_value(&self) -> serde_json::Value {
        serde_json::from_str(&self.config.to_pretty_json()).expect("config is valid JSON")
    }

    pub fn phantom_manifest(&self) -> PathBuf {
        self.dir.join("phantom").join("manifest.json")
    }

    pub fn preprocessed_dir(&self) -> PathBuf {
        self.dir.join("preprocessed")
    }

    pub fn model_path(&self, fold_dir: &str) -> PathBuf {
        self.dir.join("train").join(fold_dir).join("model.safetensors")
    }

    pub fn predictions_dir(&self, sel: Selection) -> PathBuf {
        self.dir.join("predictions").join(sel.dir_name())
    }

    pub fn evaluation_dir(&self, sel: Selection) -> PathBuf {
        self.dir.join("evaluation").join(sel.dir_name())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir.join("report")
    }
}

fn require(path: &Path, command: &'static str) -> Result<()> {
    if path.exists() { Ok(()) } else { Err(CliError::MissingArtifact { path: path.to_path_buf(), command }) }
}

fn load_cases(path: &Path) -> Result<Vec<CaseManifest>> {
    Ok(load_manifest(path)?.into_result()?)
}

// ---------------------------------------------------------------- phantom

#[derive(Serialize, Deserialize)]
struct PhantomIndex {
    cases: usize,
    manifest: String,
}

/// Writes the synthetic dataset and returns its manifest path.
pub fn cmd_phantom(run: &Run) -> Result<PathBuf> {
    let dir = run.dir.join("phantom");
    generate_dataset(&run.config.phantom, run.config.phantom_cases, &dir)?;
    let index = PhantomIndex { cases: run.config.phantom_cases, manifest: "manifest.json".into() };
    write_json(&dir.join("phantom.json"), &index, &run.stamp)?;
    log::info!("wrote {} phantom cases to {}", run.config.phantom_cases, dir.display());
    Ok(run.phantom_manifest())
}

// ------------------------------------------------------------- preprocess

#[derive(Serialize, Deserialize)]
struct PreprocessIndex {
    cases: Vec<String>,
    preprocess_hash: String,
}

/// Raw-data manifest: explicit argument, then the config, then the run's
/// phantom dataset.
fn source_manifest(run: &Run, manifest: Option<&Path>) -> Result<PathBuf> {
    let path = match manifest.map(Path::to_path_buf).or_else(|| run.config.manifest.clone()) {
        Some(p) => p,
        None => run.phantom_manifest(),
    };
    require(&path, "phantom")?;
    Ok(path)
}

pub fn cmd_preprocess(run: &Run, manifest: Option<&Path>) -> Result<Vec<String>> {
    let src = source_manifest(run, manifest)?;
    let cases = load_cases(&src)?;
    let dir = run.preprocessed_dir();
    let mut ids = Vec::with_capacity(cases.len());
    for case in &cases {
        let mut pre = preprocess_case(case, &run.config.preprocess)?;
        pre.sidecar.config_hash = run.stamp.config_hash.clone();
        save_preprocessed(&pre, dir.join(&case.case_id))?;
        ids.push(case.case_id.clone());
    }
    save_manifest(&cases, dir.join("manifest.json"))?;
    let index = PreprocessIndex { cases: ids.clone(), preprocess_hash: dilseg_core::hashing::config_hash(&run.config.preprocess) };
    write_json(&dir.join("index.json"), &index, &run.stamp)?;
    log::info!("preprocessed {} cases into {}", ids.len(), dir.display());
    Ok(ids)
}

fn preprocessed_manifest(run: &Run) -> Result<Vec<CaseManifest>> {
    let path = run.preprocessed_dir().join("manifest.json");
    require(&path, "preprocess")?;
    load_cases(&path)
}

fn load_preprocessed_cases(run: &Run, cases: &[CaseManifest]) -> Result<Vec<PreprocessedCase>> {
    cases.iter().map(|c| Ok(load_preprocessed(run.preprocessed_dir().join(&c.case_id))?)).collect()
}

// ------------------------------------------------------------------ train

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub fold: String,
    pub architecture: Architecture,
    pub parameters: usize,
    pub train_cases: Vec<String>,
    pub val_cases: Vec<String>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub first_batch_loss: f64,
    pub epoch0_train_loss: f64,
    pub final_train_loss: f64,
    pub stop: StopReason,
}

fn fold_assignment(run: &Run, cases: &[CaseManifest]) -> Result<FoldAssignment> {
    let t = &run.config.train;
    let folds = folds_for_cases(cases, t.folds, run.config.seed, t.stratify_folds)?;
    #[derive(Serialize)]
    struct FoldsFile<'a> {
        fold_hash: String,
        #[serde(flatten)]
        folds: &'a FoldAssignment,
    }
    write_json(&run.dir.join("folds.json"), &FoldsFile { fold_hash: folds.hash(), folds: &folds }, &run.stamp)?;
    Ok(folds)
}

pub fn cmd_train(run: &Run, sel: Selection) -> Result<Vec<TrainSummary>> {
    let manifest = preprocessed_manifest(run)?;
    let cases = load_preprocessed_cases(run, &manifest)?;
    let folds = fold_assignment(run, &manifest)?;
    let plan: Vec<(String, Vec<usize>, Vec<usize>)> = match sel {
        Selection::Pooled => vec![("pooled".into(), (0..cases.len()).collect(), vec![])],
        Selection::Fold(k) if k >= folds.k => {
            return Err(CliError::Config(format!("fold {k} outside 0..{}", folds.k)));
        }
        _ => {
            let wanted: Vec<usize> = match sel {
                Selection::Fold(k) => vec![k],
                _ => (0..folds.k).collect(),
            };
            wanted
                .into_iter()
                .map(|k| {
                    let (val, train): (Vec<usize>, Vec<usize>) =
                        (0..cases.len()).partition(|&i| folds.fold_of(&manifest[i].case_id) == Some(k));
                    (format!("fold{k}"), train, val)
                })
                .collect()
        }
    };
    let mut summaries = Vec::new();
    for (name, train_ix, val_ix) in plan {
        let train: Vec<&PreprocessedCase> = train_ix.iter().map(|&i| &cases[i]).collect();
        let val: Vec<&PreprocessedCase> = val_ix.iter().map(|&i| &cases[i]).collect();
        log::info!("training {name}: {} cases, {} held out", train.len(), val.len());
        let outcome = train_model(&run.config.network, &run.config.train, &train, &val)?;
        let dir = run.dir.join("train").join(&name);
        outcome.network.save_checkpoint(dir.join("model.safetensors"))?;
        write_csv(&dir.join("train_log.csv"), &log_csv(&outcome.log), &run.stamp)?;
        let summary = TrainSummary {
            fold: name,
            architecture: run.config.network.architecture,
            parameters: count_parameters(&outcome.network),
            train_cases: train_ix.iter().map(|&i| manifest[i].case_id.clone()).collect(),
            val_cases: val_ix.iter().map(|&i| manifest[i].case_id.clone()).collect(),
            epochs_run: outcome.log.len(),
            best_epoch: outcome.best_epoch,
            best_val_dice: outcome.best_val_dice,
            first_batch_loss: outcome.first_batch_loss,
            epoch0_train_loss: outcome.log.first().map_or(f64::NAN, |r| r.train_loss),
            final_train_loss: outcome.log.last().map_or(f64::NAN, |r| r.train_loss),
            stop: outcome.stop,
        };
        write_json(&dir.join("summary.json"), &summary, &run.stamp)?;
        summaries.push(summary);
    }
    Ok(summaries)
}

// ---------------------------------------------------------------- predict

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    pub model: String,
    pub probability: String,
    pub mask: String,
}

#[derive(Serialize, Deserialize)]
struct PredictionIndex {
    selection: String,
    threshold: f32,
    cases: Vec<PredictionRecord>,
}

fn load_model(path: &Path, run: &Run) -> Result<Network> {
    require(path, "train")?;
    let meta = read_checkpoint_meta(path)?;
    let expected = run.config.network.hash();
    if meta.spec_hash != expected {
        log::warn!(
            "checkpoint {} was trained with network spec {} but the config describes {expected}",
            path.display(),
            meta.spec_hash
        );
    }
    Ok(load_checkpoint(path, None)?)
}

/// Predicts the selected cases. With an explicit `checkpoint` every
/// selected case uses it.
pub fn cmd_predict(run: &Run, sel: Selection, checkpoint: Option<&Path>) -> Result<Vec<PredictionRecord>> {
    let manifest = preprocessed_manifest(run)?;
    let folds = match sel {
        Selection::Pooled => None,
        _ => Some(fold_assignment(run, &manifest)?),
    };
    let out_dir = run.predictions_dir(sel);
    let threshold = run.config.evaluation.probability_threshold;
    let batch = run.config.train.batch_size;
    let mut models: BTreeMap<String, Network> = BTreeMap::new();
    let mut records = Vec::new();
    for case in &manifest {
        let fold = folds.as_ref().and_then(|f| f.fold_of(&case.case_id));
        let model_name = match (sel, fold) {
            (Selection::Pooled, _) => "pooled".to_string(),
            (Selection::Fold(k), Some(f)) if f == k => format!("fold{k}"),
            (Selection::Fold(_), _) => continue,
            (Selection::CrossValidation, Some(f)) => format!("fold{f}"),
            (Selection::CrossValidation, None) => {
                return Err(CliError::Config(format!("case {} has no fold", case.case_id)));
            }
        };
        let (model_path, model_label) = match checkpoint {
            Some(p) => (p.to_path_buf(), relative(p, &run.dir)),
            None => (run.model_path(&model_name), format!("train/{model_name}/model.safetensors")),
        };
        if !models.contains_key(&model_label) {
            models.insert(model_label.clone(), load_model(&model_path, run)?);
        }
        let net = &models[&model_label];
        let pre = load_preprocessed(run.preprocessed_dir().join(&case.case_id))?;
        let prob = predict_case(net, &pre, batch)?;
        let mask = binarize(&prob, threshold);
        let case_dir = out_dir.join(&case.case_id);
        ensure_dir(&case_dir)?;
        save_volume(&prob, case_dir.join("probability.nii.gz"))?;
        save_volume(&mask, case_dir.join("mask.nii.gz"))?;
        records.push(PredictionRecord {
            case_id: case.case_id.clone(),
            model: model_label,
            probability: format!("{}/probability.nii.gz", case.case_id),
            mask: format!("{}/mask.nii.gz", case.case_id),
        });
    }
    if records.is_empty() {
        return Err(CliError::Config(format!("selection {} contains no cases", sel.dir_name())));
    }
    let index = PredictionIndex { selection: sel.dir_name(), threshold, cases: records.clone() };
    write_json(&out_dir.join("index.json"), &index, &run.stamp)?;
    Ok(records)
}

// --------------------------------------------------------------- evaluate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: String,
    pub all_lesions: DatasetSummary,
    pub dil_lesions: DatasetSummary,
}

pub fn cmd_evaluate(run: &Run, sel: Selection) -> Result<ModelEvaluations> {
    let manifest = preprocessed_manifest(run)?;
    let pred_dir = run.predictions_dir(sel);
    let index_path = pred_dir.join("index.json");
    require(&index_path, "predict")?;
    let (index, stamp): (PredictionIndex, Stamp) = read_stamped(&index_path)?;
    if stamp.config_hash != run.stamp.config_hash {
        log::warn!("predictions were made under config {} but evaluating with {}", stamp.config_hash, run.stamp.config_hash);
    }
    let out_dir = run.evaluation_dir(sel);
    let mut cases = Vec::with_capacity(index.cases.len());
    for rec in &index.cases {
        let case = manifest
            .iter()
            .find(|c| c.case_id == rec.case_id)
            .ok_or_else(|| CliError::Config(format!("prediction for unknown case {}", rec.case_id)))?;
        let gt = load_label_volume(&case.mask_path)?;
        let pred = load_label_volume(pred_dir.join(&rec.mask))?;
        let prostate = case.prostate_mask_path.as_ref().map(load_label_volume).transpose()?;
        let image = load_scalar_volume(&case.image_path)?;
        let ev = evaluate_case(
            &case.case_id,
            &gt,
            &pred.binary(),
            &case.lesions,
            prostate.as_ref(),
            Some(&image),
            &run.config.evaluation,
        )?;
        write_json(&out_dir.join(format!("{}.json", case.case_id)), &ev, &run.stamp)?;
        cases.push(ev);
    }
    let model = ModelEvaluations { model: run.config.model_name(), cases };
    write_json(&out_dir.join("evaluation.json"), &model, &run.stamp)?;
    let summary = EvaluationSummary {
        model: model.model.clone(),
        all_lesions: summarize_dataset(&model.cases, |_| true),
        dil_lesions: summarize_dataset(&model.cases, LesionScore::is_dil),
    };
    let rows = vec![
        (format!("{} (all)", model.model), summary.all_lesions.clone()),
        (format!("{} (GS>=7)", model.model), summary.dil_lesions.clone()),
    ];
    write_csv(&out_dir.join("summary.csv"), &dataset_table_csv(&rows), &run.stamp)?;
    write_json(&out_dir.join("summary.json"), &summary, &run.stamp)?;
    Ok(model)
}

// ----------------------------------------------------------------- report

/// Loads evaluations from `evaluation.json` files or from directories
/// containing one.
pub fn load_evaluations(paths: &[PathBuf]) -> Result<Vec<ModelEvaluations>> {
    paths
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("evaluation.json") } else { p.clone() };
            require(&file, "evaluate")?;
            Ok(read_stamped::<ModelEvaluations>(&file)?.0)
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) { format!("\"{}\"", s.replace('"', "\"\"")) } else { s.to_string() }
}

/// Writes the report for `models` (the run's own evaluation when empty) and
/// returns the report directory.
pub fn cmd_report(run: &Run, sel: Selection, evaluations: &[PathBuf]) -> Result<PathBuf> {
    let models = if evaluations.is_empty() {
        load_evaluations(&[run.evaluation_dir(sel)])?
    } else {
        load_evaluations(evaluations)?
    };
    let mut names: Vec<String> = models.iter().map(|m| m.model.clone()).collect();
    names.sort();
    names.dedup();
    if names.len() != models.len() {
        return Err(CliError::Config("models in a report need distinct names".into()));
    }
    let report = build_report(&models)?;
    let dir = run.report_dir();
    // the pairwise block only exists when there is something to compare
    let mut value = serde_json::to_value(&report).map_err(|e| CliError::json(&dir, e))?;
    if models.len() < 2 {
        value.as_object_mut().expect("report is an object").remove("pairwise");
    }
    write_json(&dir.join("report.json"), &value, &run.stamp)?;

    let mut rows = Vec::new();
    for m in &report.models {
        rows.push((format!("{} (all)", m.model), m.all_lesions.clone()));
        rows.push((format!("{} (GS>=7)", m.model), m.dil_lesions.clone()));
    }
    write_csv(&dir.join("table.csv"), &dataset_table_csv(&rows), &run.stamp)?;

    let mut groups = String::from("model,axis,group,n,median_dsc,dsc_q1,dsc_q3\n");
    for m in &report.models {
        for g in &m.groups {
            let (n, med, q1, q3) = match g.dsc {
                Some(d) => (d.n.to_string(), format!("{:.4}", d.median), format!("{:.4}", d.q1), format!("{:.4}", d.q3)),
                None => ("0".into(), String::new(), String::new(), String::new()),
            };
            groups.push_str(&format!("{},{},{},{n},{med},{q1},{q3}\n", csv_field(&m.model), g.axis, g.group));
        }
    }
    write_csv(&dir.join("groups.csv"), &groups, &run.stamp)?;

    let mut tests = String::from("model,axis,group_a,group_b,p_value,effect_size,significant\n");
    for m in &report.models {
        for t in &m.group_tests {
            tests.push_str(&format!(
                "{},{},{},{},{:.6},{:.4},{}\n",
                csv_field(&m.model),
                t.axis,
                t.group_a,
                t.group_b,
                t.result.p_value,
                t.result.effect_size,
                t.significant
            ));
        }
    }
    write_csv(&dir.join("group_tests.csv"), &tests, &run.stamp)?;

    let pairwise_path = dir.join("pairwise.csv");
    if models.len() >= 2 {
        let mut pw = String::from("model_a,model_b,n_lesions,median_difference,p_value,effect_size,significant\n");
        for p in &report.pairwise {
            pw.push_str(&format!(
                "{},{},{},{:.4},{:.6},{:.4},{}\n",
                csv_field(&p.model_a),
                csv_field(&p.model_b),
                p.n_lesions,
                p.median_difference,
                p.p_value,
                p.effect_size,
                p.significant
            ));
        }
        write_csv(&pairwise_path, &pw, &run.stamp)?;
    } else if pairwise_path.exists() {
        std::fs::remove_file(&pairwise_path).map_err(|e| CliError::io(&pairwise_path, e))?;
    }

    for axis in ["gleason", "size", "zone"] {
        let series: Vec<(String, Vec<(String, Option<(f64, f64, f64)>)>)> = report
            .models
            .iter()
            .map(|m| {
                let bars = m
                    .groups
                    .iter()
                    .filter(|g| g.axis == axis)
                    .map(|g| (g.group.clone(), g.dsc.map(|d| (d.median, d.q1, d.q3))))
                    .collect();
                (m.model.clone(), bars)
            })
            .collect();
        let svg = grouped_bar_chart(&format!("Lesion DSC by {axis}"), &series);
        write_svg(&dir.join("figures").join(format!("dsc_by_{axis}.svg")), &svg, &run.stamp)?;
    }
    Ok(dir)
}

// ----------------------------------------------------------------- ablate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub config_hash: String,
    pub parameters: usize,
    pub mean_best_val_dice: Option<f64>,
    pub summary: DatasetSummary,
}

/// Configurations of the ablation grid as (axis, value, config).
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<(String, String, ExperimentConfig)> {
    let mut variants = Vec::new();
    let mut mrrn = base.clone();
    if mrrn.network.architecture != Architecture::MrrnDs {
        mrrn.network = crate::config::switch_architecture(&mrrn.network, Architecture::MrrnDs);
    }
    for &level in &base.ablation.supervision_levels {
        let mut c = mrrn.clone();
        c.network.supervision_level = level;
        variants.push(("supervision_level".to_string(), level.to_string(), c));
    }
    for &mu in &base.ablation.mu {
        let mut c = mrrn.clone();
        c.train.mu = mu;
        variants.push(("mu".to_string(), format!("{mu}"), c));
    }
    for &a in &base.ablation.stream_ablations {
        let mut c = mrrn.clone();
        c.network.ablation = a;
        let label = match a {
            Ablation::None => "none",
            Ablation::DropFullresStream => "drop_fullres_stream",
            Ablation::KeepOnlyFullresStream => "keep_only_fullres_stream",
        };
        variants.push(("stream".to_string(), label.to_string(), c));
    }
    variants
}

/// Runs the full pipeline for one config: phantom (when no manifest is
/// configured), preprocess, train, predict and evaluate.
pub fn run_pipeline(config: ExperimentConfig, sel: Selection) -> Result<(Run, Vec<TrainSummary>, ModelEvaluations)> {
    let run = Run::new(config)?;
    if run.config.manifest.is_none() {
        cmd_phantom(&run)?;
    }
    cmd_preprocess(&run, None)?;
    let summaries = cmd_train(&run, sel)?;
    cmd_predict(&run, sel, None)?;
    let evals = cmd_evaluate(&run, sel)?;
    Ok((run, summaries, evals))
}

pub fn cmd_ablate(run: &Run, sel: Selection) -> Result<Vec<AblationRow>> {
    let mut done: BTreeMap<String, (usize, Option<f64>, DatasetSummary)> = BTreeMap::new();
    let mut rows = Vec::new();
    for (axis, value, mut cfg) in ablation_variants(&run.config) {
        cfg.validate()?;
        cfg.output_dir = run.config.output_dir.clone();
        let hash = cfg.hash();
        if !done.contains_key(&hash) {
            log::info!("ablation {axis}={value}: run {hash}");
            let (_, summaries, evals) = run_pipeline(cfg, sel)?;
            let dice: Vec<f64> = summaries.iter().filter_map(|s| s.best_val_dice).collect();
            let mean = (!dice.is_empty()).then(|| dice.iter().sum::<f64>() / dice.len() as f64);
            let params = summaries.first().map_or(0, |s| s.parameters);
            done.insert(hash.clone(), (params, mean, summarize_dataset(&evals.cases, |_| true)));
        }
        let (parameters, mean_best_val_dice, summary) = done[&hash].clone();
        rows.push(AblationRow { axis, value, config_hash: hash, parameters, mean_best_val_dice, summary });
    }
    let dir = run.dir.join("ablation");
    let mut csv = String::from(
        "axis,value,config_hash,parameters,mean_best_val_dice,n_lesions,median_dsc,dsc_q1,dsc_q3,recall,precision,f1\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    for r in &rows {
        let s = &r.summary;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4}\n",
            r.axis,
            r.value,
            r.config_hash,
            r.parameters,
            opt(r.mean_best_val_dice),
            s.n_lesions,
            opt(s.dsc.map(|d| d.median)),
            opt(s.dsc.map(|d| d.q1)),
            opt(s.dsc.map(|d| d.q3)),
            s.detection.recall,
            s.detection.precision,
            s.detection.f1
        ));
    }
    write_csv(&dir.join("summary.csv"), &csv, &run.stamp)?;
    write_json(&dir.join("summary.json"), &rows, &run.stamp)?;
    Ok(rows)
}

/// Reads a case evaluation written by `evaluate`.
pub fn read_case_evaluation(path: &Path) -> Result<CaseEvaluation> {
    read_json(path)
}
