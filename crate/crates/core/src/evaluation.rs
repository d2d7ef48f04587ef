//! Lesion-level detection and segmentation scoring.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::components::{label_binary, Connectivity};
use crate::error::{io_err, json_err, Error, Result};
use crate::manifest::{Gleason, LesionRecord, Zone};
use crate::stats::{median_iqr, MedianIqr};
use crate::volumes::{LabelVolume, ScalarVolume, Volume};

/// Predicted components below this volume (cm³) are ignored.
pub const NEGLIGIBLE_VOLUME_CC: f64 = 0.1;
/// A detection needs lesion DSC strictly above this value.
pub const DETECTION_DSC_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// A prediction component may validate several GT lesions when it is
    /// the best overlap of each.
    #[default]
    ManyToOne,
    /// Greedy one-to-one assignment by descending DSC.
    OneToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub connectivity: Connectivity,
    pub min_volume_cc: f64,
    pub dsc_threshold: f64,
    pub matching: MatchingMode,
    /// Probability cut used to binarize soft predictions.
    pub probability_threshold: f32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Full,
            min_volume_cc: NEGLIGIBLE_VOLUME_CC,
            dsc_threshold: DETECTION_DSC_THRESHOLD,
            matching: MatchingMode::ManyToOne,
            probability_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredComponent {
    pub id: u32,
    pub voxel_count: usize,
    pub volume_cc: f64,
    /// Mean voxel index (z, y, x).
    pub centroid: [f64; 3],
    pub ignored: bool,
}

/// Connected components of a binary prediction; `labels` holds component
/// ids (0 = background), including ignored components.
#[derive(Debug, Clone)]
pub struct LesionExtraction {
    pub labels: Array3<u32>,
    pub components: Vec<PredComponent>,
}

impl LesionExtraction {
    pub fn retained(&self) -> impl Iterator<Item = &PredComponent> {
        self.components.iter().filter(|c| !c.ignored)
    }
}

/// Labels the prediction into 3-D components and flags those under the
/// negligible-volume cutoff. `spacing` is (x, y, z) in mm.
pub fn extract_lesions(mask: &Array3<bool>, spacing: [f32; 3], options: &EvalOptions) -> LesionExtraction {
    let voxel_cc = spacing.iter().map(|&s| s as f64).product::<f64>() / 1000.0;
    let lab = label_binary(mask, options.connectivity);
    let mut sums = vec![[0f64; 3]; lab.count()];
    for ((z, y, x), &l) in lab.labels.indexed_iter() {
        if l > 0 {
            let s = &mut sums[l as usize - 1];
            s[0] += z as f64;
            s[1] += y as f64;
            s[2] += x as f64;
        }
    }
    let components = lab
        .sizes
        .iter()
        .zip(&sums)
        .enumerate()
        .map(|(i, (&n, s))| {
            let volume_cc = n as f64 * voxel_cc;
            PredComponent {
                id: i as u32 + 1,
                voxel_count: n,
                volume_cc,
                centroid: s.map(|v| v / n as f64),
                ignored: volume_cc < options.min_volume_cc,
            }
        })
        .collect();
    LesionExtraction { labels: lab.labels, components }
}

fn dsc_from_counts(overlap: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * overlap as f64 / (a + b) as f64
    }
}

/// Voxel DSC 2TP / (2TP + FP + FN). Two empty regions give 1.
pub fn lesion_dsc(gt: &Array3<bool>, pred: &Array3<bool>) -> Result<f64> {
    if gt.dim() != pred.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", gt.dim(), pred.dim())));
    }
    let (mut tp, mut a, mut b) = (0usize, 0usize, 0usize);
    Zip::from(gt).and(pred).for_each(|&g, &p| {
        tp += usize::from(g && p);
        a += usize::from(g);
        b += usize::from(p);
    });
    Ok(dsc_from_counts(tp, a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchStatus {
    TruePositive,
    FalseNegative,
    FalsePositive,
    IgnoredSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionMatch {
    pub gt_lesion_id: Option<u16>,
    pub pred_component_id: Option<u32>,
    pub dsc: f64,
    pub status: MatchStatus,
}

/// Pairwise overlap bookkeeping between GT lesion ids and component ids.
struct Overlaps {
    gt_sizes: Vec<(u16, usize)>,
    overlap: HashMap<(u16, u32), usize>,
}

impl Overlaps {
    fn new(gt: &Array3<u16>, pred_labels: &Array3<u32>) -> Self {
        let mut gt_sizes: HashMap<u16, usize> = HashMap::new();
        let mut overlap = HashMap::new();
        Zip::from(gt).and(pred_labels).for_each(|&g, &p| {
            if g > 0 {
                *gt_sizes.entry(g).or_default() += 1;
                if p > 0 {
                    *overlap.entry((g, p)).or_default() += 1;
                }
            }
        });
        let mut gt_sizes: Vec<_> = gt_sizes.into_iter().collect();
        gt_sizes.sort_unstable();
        Self { gt_sizes, overlap }
    }

    /// Retained components overlapping `gt`, with their DSC, ordered by
    /// descending DSC then ascending component id.
    fn candidates(&self, gt: u16, gt_size: usize, pred: &LesionExtraction) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = pred
            .retained()
            .filter_map(|c| {
                let ov = *self.overlap.get(&(gt, c.id))?;
                Some((c.id, dsc_from_counts(ov, gt_size, c.voxel_count)))
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Matches GT lesions (nonzero ids of `gt`) to the retained components of
/// `pred`. Every GT lesion yields one TRUE_POSITIVE or FALSE_NEGATIVE entry;
/// every component yields at most one FALSE_POSITIVE or IGNORED_SMALL entry.
pub fn match_lesions(gt: &Array3<u16>, pred: &LesionExtraction, options: &EvalOptions) -> Result<Vec<LesionMatch>> {
    if gt.dim() != pred.labels.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", gt.dim(), pred.labels.dim())));
    }
    let ov = Overlaps::new(gt, &pred.labels);
    let cands: Vec<(u16, Vec<(u32, f64)>)> = ov
        .gt_sizes
        .iter()
        .map(|&(g, n)| (g, ov.candidates(g, n, pred)))
        .collect();
    let mut assigned: HashMap<u16, (u32, f64)> = HashMap::new();
    match options.matching {
        MatchingMode::ManyToOne => {
            for (g, c) in &cands {
                if let Some(&(id, d)) = c.first() {
                    if d > options.dsc_threshold {
                        assigned.insert(*g, (id, d));
                    }
                }
            }
        }
        MatchingMode::OneToOne => {
            let mut pairs: Vec<(u16, u32, f64)> = cands
                .iter()
                .flat_map(|(g, c)| c.iter().map(move |&(id, d)| (*g, id, d)))
                .filter(|p| p.2 > options.dsc_threshold)
                .collect();
            pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut used = std::collections::HashSet::new();
            for (g, id, d) in pairs {
                if !assigned.contains_key(&g) && !used.contains(&id) {
                    assigned.insert(g, (id, d));
                    used.insert(id);
                }
            }
        }
    }
    let mut matches = Vec::new();
    for (g, c) in &cands {
        matches.push(match assigned.get(g) {
            Some(&(id, d)) => LesionMatch {
                gt_lesion_id: Some(*g),
                pred_component_id: Some(id),
                dsc: d,
                status: MatchStatus::TruePositive,
            },
            None => LesionMatch {
                gt_lesion_id: Some(*g),
                pred_component_id: None,
                dsc: c.first().map_or(0.0, |x| x.1),
                status: MatchStatus::FalseNegative,
            },
        });
    }
    let supporting: std::collections::HashSet<u32> = assigned.values().map(|v| v.0).collect();
    for comp in &pred.components {
        if comp.ignored {
            matches.push(LesionMatch {
                gt_lesion_id: None,
                pred_component_id: Some(comp.id),
                dsc: 0.0,
                status: MatchStatus::IgnoredSmall,
            });
        } else if !supporting.contains(&comp.id) {
            let best = ov
                .gt_sizes
                .iter()
                .filter_map(|&(g, n)| ov.overlap.get(&(g, comp.id)).map(|&o| dsc_from_counts(o, n, comp.voxel_count)))
                .fold(0.0, f64::max);
            matches.push(LesionMatch {
                gt_lesion_id: None,
                pred_component_id: Some(comp.id),
                dsc: best,
                status: MatchStatus::FalsePositive,
            });
        }
    }
    Ok(matches)
}

/// Per-lesion result with the metadata needed for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionScore {
    pub lesion_id: u16,
    /// DSC against the best-overlapping retained component, 0 without one.
    pub dsc: f64,
    pub detected: bool,
    pub volume_cc: f64,
    pub gleason: Option<Gleason>,
    pub zone: Zone,
    pub median_adc: Option<f64>,
}

impl LesionScore {
    /// Dominant intraprostatic lesion: Gleason sum of 7 or more.
    pub fn is_dil(&self) -> bool {
        self.gleason.is_some_and(|g| g.sum() >= 7)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub case_id: String,
    pub matches: Vec<LesionMatch>,
    pub lesions: Vec<LesionScore>,
    pub tp_count: usize,
    pub fn_count: usize,
    pub fp_count: usize,
    pub ignored_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_of_gland_fp_count: Option<usize>,
}

impl CaseEvaluation {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(json_err(path))
    }
}

/// Counts FALSE_POSITIVE components whose centroid voxel lies outside the
/// prostate mask.
pub fn out_of_gland_detections(matches: &[LesionMatch], pred: &LesionExtraction, prostate: &Array3<u16>) -> Result<usize> {
    if prostate.dim() != pred.labels.dim() {
        return Err(Error::ShapeMismatch("prostate mask grid differs from prediction".into()));
    }
    let (nz, ny, nx) = prostate.dim();
    let by_id: HashMap<u32, &PredComponent> = pred.components.iter().map(|c| (c.id, c)).collect();
    Ok(matches
        .iter()
        .filter(|m| m.status == MatchStatus::FalsePositive)
        .filter_map(|m| by_id.get(&m.pred_component_id?))
        .filter(|c| {
            let r = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
            let idx = [r(c.centroid[0], nz), r(c.centroid[1], ny), r(c.centroid[2], nx)];
            prostate[idx] == 0
        })
        .count())
}

fn median(values: &mut [f32]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f32::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    })
}

/// Full case evaluation: binarized prediction vs labeled GT, with optional
/// prostate mask (out-of-gland counting) and image (per-lesion median ADC).
pub fn evaluate_case(
    case_id: &str,
    gt: &LabelVolume,
    prediction: &Volume<bool>,
    records: &[LesionRecord],
    prostate: Option<&LabelVolume>,
    image: Option<&ScalarVolume>,
    options: &EvalOptions,
) -> Result<CaseEvaluation> {
    if gt.data().dim() != prediction.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "{case_id}: ground truth {:?} vs prediction {:?}",
            gt.data().dim(),
            prediction.data().dim()
        )));
    }
    let ext = extract_lesions(prediction.data(), gt.spacing(), options);
    let matches = match_lesions(gt.data(), &ext, options)?;
    let voxel_cc = gt.geometry().voxel_volume_mm3() / 1000.0;
    let mut adc_values: HashMap<u16, Vec<f32>> = HashMap::new();
    if let Some(img) = image {
        if img.data().dim() != gt.data().dim() {
            return Err(Error::ShapeMismatch(format!("{case_id}: image grid differs from mask")));
        }
        Zip::from(gt.data()).and(img.data()).for_each(|&g, &v| {
            if g > 0 {
                adc_values.entry(g).or_default().push(v);
            }
        });
    }
    let mut counts: HashMap<u16, usize> = HashMap::new();
    for &g in gt.data().iter().filter(|&&g| g > 0) {
        *counts.entry(g).or_default() += 1;
    }
    let lesions = matches
        .iter()
        .filter_map(|m| {
            let id = m.gt_lesion_id?;
            let rec = records.iter().find(|r| r.lesion_id == id);
            Some(LesionScore {
                lesion_id: id,
                dsc: m.dsc,
                detected: m.status == MatchStatus::TruePositive,
                volume_cc: counts[&id] as f64 * voxel_cc,
                gleason: rec.and_then(|r| r.gleason),
                zone: rec.map_or(Zone::Unlabeled, |r| r.zone),
                median_adc: adc_values.get_mut(&id).and_then(|v| median(v)),
            })
        })
        .collect();
    let count = |s: MatchStatus| matches.iter().filter(|m| m.status == s).count();
    let out_of_gland_fp_count = prostate
        .map(|p| out_of_gland_detections(&matches, &ext, p.data()))
        .transpose()?;
    Ok(CaseEvaluation {
        case_id: case_id.to_string(),
        tp_count: count(MatchStatus::TruePositive),
        fn_count: count(MatchStatus::FalseNegative),
        fp_count: count(MatchStatus::FalsePositive),
        ignored_count: count(MatchStatus::IgnoredSmall),
        out_of_gland_fp_count,
        lesions,
        matches,
    })
}

/// Recall, precision and F1 with flags for undefined denominators (the
/// value is then reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub positives: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub recall_undefined: bool,
    pub precision_undefined: bool,
    pub f1_undefined: bool,
}

/// F1 = 2PR / (P + R); 0 and flagged when P + R = 0.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    }
}

pub fn detection_counts(tp: usize, fp: usize, positives: usize) -> DetectionMetrics {
    let ratio = |a: usize, b: usize| if b == 0 { (0.0, true) } else { (a as f64 / b as f64, false) };
    let (recall, recall_undefined) = ratio(tp, positives);
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (f1, f1_undefined) = f1_score(precision, recall);
    DetectionMetrics { tp, fp, positives, recall, precision, f1, recall_undefined, precision_undefined, f1_undefined }
}

/// Aggregates matches over a dataset: P is the number of GT lesions.
pub fn detection_metrics<'a>(matches: impl IntoIterator<Item = &'a LesionMatch>) -> DetectionMetrics {
    let (mut tp, mut fp, mut p) = (0, 0, 0);
    for m in matches {
        match m.status {
            MatchStatus::TruePositive => {
                tp += 1;
                p += 1;
            }
            MatchStatus::FalseNegative => p += 1,
            MatchStatus::FalsePositive => fp += 1,
            MatchStatus::IgnoredSmall => {}
        }
    }
    detection_counts(tp, fp, p)
}

pub fn false_positives_per_lesion(fp: usize, n_lesions: usize) -> Result<f64> {
    if n_lesions == 0 {
        return Err(Error::InvalidArgument("no ground-truth lesions".into()));
    }
    Ok(fp as f64 / n_lesions as f64)
}

/// One row of the detection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_cases: usize,
    pub n_lesions: usize,
    pub dsc: Option<MedianIqr>,
    pub detection: DetectionMetrics,
    pub fp_per_lesion: Option<f64>,
    pub out_of_gland_fp: Option<usize>,
}

/// Summarizes lesions passing `include`. False positives are counted over
/// all cases regardless of the filter.
pub fn summarize_dataset(cases: &[CaseEvaluation], include: impl Fn(&LesionScore) -> bool) -> DatasetSummary {
    let lesions: Vec<&LesionScore> = cases.iter().flat_map(|c| &c.lesions).filter(|l| include(l)).collect();
    let dsc: Vec<f64> = lesions.iter().map(|l| l.dsc).collect();
    let tp = lesions.iter().filter(|l| l.detected).count();
    let fp: usize = cases.iter().map(|c| c.fp_count).sum();
    let oog: Vec<usize> = cases.iter().filter_map(|c| c.out_of_gland_fp_count).collect();
    DatasetSummary {
        n_cases: cases.len(),
        n_lesions: lesions.len(),
        dsc: median_iqr(&dsc),
        detection: detection_counts(tp, fp, lesions.len()),
        fp_per_lesion: false_positives_per_lesion(fp, lesions.len()).ok(),
        out_of_gland_fp: (!oog.is_empty()).then(|| oog.iter().sum()),
    }
}

/// Detection summary CSV, one row per (model, summary).
pub fn dataset_table_csv(rows: &[(String, DatasetSummary)]) -> String {
    let mut out = String::from("model,n_lesions,median_dsc,dsc_q1,dsc_q3,recall,precision,f1,fp_per_lesion\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    for (model, s) in rows {
        let _ = writeln!(
            out,
            "{model},{},{},{},{},{:.4},{:.4},{:.4},{}",
            s.n_lesions,
            opt(s.dsc.map(|d| d.median)),
            opt(s.dsc.map(|d| d.q1)),
            opt(s.dsc.map(|d| d.q3)),
            s.detection.recall,
            s.detection.precision,
            s.detection.f1,
            opt(s.fp_per_lesion),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use proptest::prelude::*;

    fn opts() -> EvalOptions {
        EvalOptions::default()
    }

    #[test]
    fn negligible_volume_filter() {
        // 1.171875 mm³ voxels
        let spacing = [0.625, 0.625, 3.0];
        let mut m = Array3::from_elem((4, 40, 40), false);
        m.slice_mut(s![0, 0..10, 0..10]).fill(true);
        m.slice_mut(s![0, 20..30, 20..30]).fill(true);
        let ext = extract_lesions(&m, spacing, &opts());
        assert_eq!(ext.components.len(), 2);
        assert!(ext.components.iter().all(|c| !c.ignored));
        assert!((ext.components[0].volume_cc - 0.1171875).abs() < 1e-12);

        let mut m = Array3::from_elem((4, 40, 40), false);
        m.slice_mut(s![0, 0..8, 0..10]).fill(true);
        m.slice_mut(s![0, 8, 0..5]).fill(true);
        let ext = extract_lesions(&m, spacing, &opts());
        assert_eq!(ext.components[0].voxel_count, 85);
        assert!(ext.components[0].ignored);
        assert!(extract_lesions(&Array3::from_elem((2, 2, 2), false), spacing, &opts()).components.is_empty());
    }

    #[test]
    fn dsc_examples() {
        let mut a = Array3::from_elem((1, 1, 4), false);
        let mut b = a.clone();
        a.slice_mut(s![0, 0, 0..3]).fill(true);
        b.slice_mut(s![0, 0, 1..4]).fill(true);
        // TP = 2, FP = 1, FN = 1
        assert!((lesion_dsc(&a, &b).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(lesion_dsc(&a, &a).unwrap(), 1.0);
        let empty = Array3::from_elem((1, 1, 4), false);
        assert_eq!(lesion_dsc(&empty, &empty).unwrap(), 1.0);
        let mut c = empty.clone();
        c[[0, 0, 3]] = true;
        let mut d = empty.clone();
        d[[0, 0, 0]] = true;
        assert_eq!(lesion_dsc(&c, &d).unwrap(), 0.0);
        assert!(lesion_dsc(&a, &Array3::from_elem((1, 2, 4), false)).is_err());
    }

    fn big_voxel_opts() -> EvalOptions {
        EvalOptions { min_volume_cc: 0.0, ..opts() }
    }

    #[test]
    fn threshold_is_strict() {
        // GT 100 voxels, prediction 20 voxels with 6 inside: DSC = 12/120
        let mut gt = Array3::<u16>::zeros((1, 20, 20));
        gt.slice_mut(s![0, 0..10, 0..10]).fill(1);
        let mut p = Array3::from_elem((1, 20, 20), false);
        p.slice_mut(s![0, 9, 4..10]).fill(true);
        p.slice_mut(s![0, 10, 0..10]).fill(true);
        p.slice_mut(s![0, 11, 0..4]).fill(true);
        let ext = extract_lesions(&p, [1.0; 3], &big_voxel_opts());
        assert_eq!(ext.components.len(), 1);
        let m = match_lesions(&gt, &ext, &big_voxel_opts()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].status, MatchStatus::FalseNegative);
        assert!((m[0].dsc - 0.1).abs() < 1e-12);
        assert_eq!(m[1].status, MatchStatus::FalsePositive);
    }

    #[test]
    fn identical_and_empty_predictions() {
        let mut gt = Array3::<u16>::zeros((3, 30, 30));
        gt.slice_mut(s![1, 2..8, 2..8]).fill(1);
        let ext = extract_lesions(&gt.mapv(|v| v > 0), [1.0; 3], &big_voxel_opts());
        let m = match_lesions(&gt, &ext, &big_voxel_opts()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].status, MatchStatus::TruePositive);
        assert_eq!(detection_metrics(&m).recall, 1.0);

        gt.slice_mut(s![1, 12..15, 12..15]).fill(2);
        gt.slice_mut(s![2, 20..25, 20..25]).fill(3);
        let ext = extract_lesions(&Array3::from_elem((3, 30, 30), false), [1.0; 3], &opts());
        let m = match_lesions(&gt, &ext, &opts()).unwrap();
        assert_eq!(m.iter().filter(|x| x.status == MatchStatus::FalseNegative).count(), 3);
        let d = detection_metrics(&m);
        assert_eq!(d.recall, 0.0);
        assert!(d.precision_undefined && d.precision == 0.0);
    }

    #[test]
    fn many_to_one_and_one_to_one() {
        // one prediction covering two adjacent GT lesions
        let mut gt = Array3::<u16>::zeros((1, 10, 20));
        gt.slice_mut(s![0, 0..10, 0..10]).fill(1);
        gt.slice_mut(s![0, 0..10, 10..20]).fill(2);
        let ext = extract_lesions(&Array3::from_elem((1, 10, 20), true), [1.0; 3], &big_voxel_opts());
        let m = match_lesions(&gt, &ext, &big_voxel_opts()).unwrap();
        assert_eq!(m.iter().filter(|x| x.status == MatchStatus::TruePositive).count(), 2);
        let one = EvalOptions { matching: MatchingMode::OneToOne, ..big_voxel_opts() };
        let m = match_lesions(&gt, &ext, &one).unwrap();
        assert_eq!(m.iter().filter(|x| x.status == MatchStatus::TruePositive).count(), 1);
        assert_eq!(m.iter().filter(|x| x.status == MatchStatus::FalseNegative).count(), 1);
        assert_eq!(m.iter().filter(|x| x.status == MatchStatus::FalsePositive).count(), 0);
    }

    #[test]
    fn f1_examples() {
        assert!((f1_score(0.49, 1.0).0 - 0.98 / 1.49).abs() < 1e-12);
        assert!((f1_score(0.49, 1.0).0 - 0.66).abs() < 0.005);
        assert!((f1_score(0.49, 0.96).0 - 0.65).abs() < 0.005);
        assert_eq!(f1_score(0.0, 0.0), (0.0, true));
    }

    #[test]
    fn false_positive_rate() {
        assert!((false_positives_per_lesion(19, 10).unwrap() - 1.9).abs() < 1e-12);
        assert!((false_positives_per_lesion(9, 10).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(false_positives_per_lesion(0, 10).unwrap(), 0.0);
        assert!(false_positives_per_lesion(3, 0).is_err());
    }

    #[test]
    fn out_of_gland_counting() {
        let mut prostate = Array3::<u16>::zeros((1, 20, 40));
        prostate.slice_mut(s![0, .., 0..20]).fill(1);
        let gt = Array3::<u16>::zeros((1, 20, 40));
        let count = |pred: &Array3<bool>| {
            let ext = extract_lesions(pred, [1.0; 3], &big_voxel_opts());
            let m = match_lesions(&gt, &ext, &big_voxel_opts()).unwrap();
            out_of_gland_detections(&m, &ext, &prostate).unwrap()
        };
        let mut inside = Array3::from_elem((1, 20, 40), false);
        inside.slice_mut(s![0, 2..6, 2..6]).fill(true);
        assert_eq!(count(&inside), 0);
        let mut outside = inside.clone();
        outside.slice_mut(s![0, 10..14, 30..34]).fill(true);
        assert_eq!(count(&outside), 1);
        // straddles x = 20 with centroid at x = 17.5
        let mut straddle = Array3::from_elem((1, 20, 40), false);
        straddle.slice_mut(s![0, 5..8, 14..22]).fill(true);
        assert_eq!(count(&straddle), 0);
    }

    #[test]
    fn case_evaluation_and_summary() {
        let g = Volume::new(
            {
                let mut a = Array3::<u16>::zeros((4, 30, 30));
                a.slice_mut(s![1..3, 5..15, 5..15]).fill(1);
                a.slice_mut(s![1..3, 20..25, 20..25]).fill(2);
                a
            },
            crate::volumes::Geometry::with_spacing([1.0, 1.0, 3.0]),
        )
        .unwrap();
        let pred = g.map(|&v| v == 1);
        let img = g.map(|&v| if v == 1 { 700.0 } else { 1400.0 });
        let records = vec![LesionRecord {
            lesion_id: 1,
            gleason: Some(Gleason::new(3, 4).unwrap()),
            zone: Zone::Pz,
            volume_cc: None,
        }];
        let ev = evaluate_case("c1", &g, &pred, &records, None, Some(&img), &opts()).unwrap();
        assert_eq!((ev.tp_count, ev.fn_count, ev.fp_count), (1, 1, 0));
        assert_eq!(ev.lesions[0].median_adc, Some(700.0));
        assert!(ev.lesions[0].is_dil());
        assert!(!ev.lesions[1].is_dil());
        assert!((ev.lesions[0].volume_cc - 0.6).abs() < 1e-12);
        let all = summarize_dataset(std::slice::from_ref(&ev), |_| true);
        assert_eq!(all.n_lesions, 2);
        assert_eq!(all.detection.recall, 0.5);
        let dil = summarize_dataset(std::slice::from_ref(&ev), LesionScore::is_dil);
        assert_eq!(dil.detection.recall, 1.0);
        let csv = dataset_table_csv(&[("m".into(), all)]);
        assert_eq!(csv.lines().count(), 2);
    }

    /// Flood-fill and all-pairs oracle, independent of the labeling and
    /// matching code above.
    fn brute_force(gt: &Array3<u16>, pred: &Array3<bool>) -> (usize, usize, usize, Vec<f64>) {
        let dim = pred.dim();
        let mut comp = Array3::<usize>::zeros(dim);
        let mut comps: Vec<Vec<(usize, usize, usize)>> = Vec::new();
        for z in 0..dim.0 {
            for y in 0..dim.1 {
                for x in 0..dim.2 {
                    if !pred[[z, y, x]] || comp[[z, y, x]] != 0 {
                        continue;
                    }
                    comps.push(Vec::new());
                    let id = comps.len();
                    let mut frontier = vec![(z, y, x)];
                    comp[[z, y, x]] = id;
                    while let Some(v) = frontier.pop() {
                        comps[id - 1].push(v);
                        for q in 0..dim.0 {
                            for r in 0..dim.1 {
                                for t in 0..dim.2 {
                                    let near = q.abs_diff(v.0) <= 1 && r.abs_diff(v.1) <= 1 && t.abs_diff(v.2) <= 1;
                                    if near && pred[[q, r, t]] && comp[[q, r, t]] == 0 {
                                        comp[[q, r, t]] = id;
                                        frontier.push((q, r, t));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut ids: Vec<u16> = gt.iter().copied().filter(|&g| g > 0).collect();
        ids.sort();
        ids.dedup();
        let mut tp = 0;
        let mut supporting = vec![false; comps.len()];
        let mut dscs = Vec::new();
        for &g in &ids {
            let mut best: Option<(f64, usize)> = None;
            for (ci, c) in comps.iter().enumerate() {
                let region_g = gt.mapv(|v| v == g);
                let mut region_p = Array3::from_elem(dim, false);
                for &v in c {
                    region_p[[v.0, v.1, v.2]] = true;
                }
                let inter = Zip::from(&region_g).and(&region_p).fold(0, |a, &x, &y| a + usize::from(x && y));
                if inter == 0 {
                    continue;
                }
                let d = 2.0 * inter as f64 / (region_g.iter().filter(|&&x| x).count() + c.len()) as f64;
                if best.is_none_or(|(bd, _)| d > bd) {
                    best = Some((d, ci));
                }
            }
            let d = best.map_or(0.0, |b| b.0);
            dscs.push(d);
            if let Some((d, ci)) = best {
                if d > 0.1 {
                    tp += 1;
                    supporting[ci] = true;
                }
            }
        }
        let fp = supporting.iter().filter(|&&s| !s).count();
        (tp, ids.len() - tp, fp, dscs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_brute_force_oracle(gt_bits in proptest::collection::vec(0u16..40, 16 * 16 * 8),
                                      pred_bits in proptest::collection::vec(0u8..10, 16 * 16 * 8)) {
            // sparse random labels: ids 1..=3 on ~7% of voxels
            let gt = Array3::from_shape_vec((8, 16, 16), gt_bits.iter().map(|&v| if v < 3 { v + 1 } else { 0 }).collect()).unwrap();
            let pred = Array3::from_shape_vec((8, 16, 16), pred_bits.iter().map(|&v| v < 2).collect()).unwrap();
            let o = big_voxel_opts();
            let ext = extract_lesions(&pred, [1.0; 3], &o);
            let m = match_lesions(&gt, &ext, &o).unwrap();
            let count = |s| m.iter().filter(|x| x.status == s).count();
            let (tp, fn_, fp, dscs) = brute_force(&gt, &pred);
            prop_assert_eq!(count(MatchStatus::TruePositive), tp);
            prop_assert_eq!(count(MatchStatus::FalseNegative), fn_);
            prop_assert_eq!(count(MatchStatus::FalsePositive), fp);
            let ours: Vec<f64> = m.iter().filter(|x| x.gt_lesion_id.is_some()).map(|x| x.dsc).collect();
            prop_assert_eq!(ours, dscs);
            // conservation
            prop_assert_eq!(tp + fn_, gt.iter().filter(|&&g| g > 0).collect::<std::collections::HashSet<_>>().len());
            prop_assert_eq!(fp + ext.components.iter().filter(|c| m.iter().any(|x| x.status == MatchStatus::TruePositive && x.pred_component_id == Some(c.id))).count(), ext.components.len());
        }

        #[test]
        fn whole_lesion_dsc_matches_voxel_oracle(a in proptest::collection::vec(any::<bool>(), 16 * 16 * 8),
                                                 b in proptest::collection::vec(any::<bool>(), 16 * 16 * 8)) {
            let ga = Array3::from_shape_vec((8, 16, 16), a.clone()).unwrap();
            let gb = Array3::from_shape_vec((8, 16, 16), b.clone()).unwrap();
            let tp = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            let fp = a.iter().zip(&b).filter(|(x, y)| !**x && **y).count();
            let fn_ = a.iter().zip(&b).filter(|(x, y)| **x && !**y).count();
            let oracle = if tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
            prop_assert_eq!(lesion_dsc(&ga, &gb).unwrap(), oracle);
        }

        #[test]
        fn growing_toward_gt_keeps_detection(w in 3usize..10, grow in 0usize..6) {
            // GT is a 10×10 square; prediction is a w×10 strip inside it,
            // grown by `grow` columns still inside the GT.
            let mut gt = Array3::<u16>::zeros((1, 12, 24));
            gt.slice_mut(s![0, 0..10, 0..10]).fill(1);
            let strip = |cols: usize| {
                let mut p = Array3::from_elem((1, 12, 24), false);
                p.slice_mut(s![0, 0..10, 0..cols.min(10)]).fill(true);
                p
            };
            let o = big_voxel_opts();
            let before = match_lesions(&gt, &extract_lesions(&strip(w), [1.0; 3], &o), &o).unwrap();
            let after = match_lesions(&gt, &extract_lesions(&strip(w + grow), [1.0; 3], &o), &o).unwrap();
            prop_assert!(after[0].dsc >= before[0].dsc);
            if before[0].status == MatchStatus::TruePositive {
                prop_assert_eq!(after[0].status, MatchStatus::TruePositive);
            }
            prop_assert!(after.iter().all(|x| x.status != MatchStatus::FalsePositive));
        }
    }
}
