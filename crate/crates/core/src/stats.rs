//! Rank tests, effect sizes, rank correlation and lesion grouping.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::evaluation::{summarize_dataset, CaseEvaluation, DatasetSummary, LesionScore};
use crate::manifest::{Gleason, Zone};

/// Largest sample size for which the signed-rank p-value is enumerated.
pub const EXACT_SIGNED_RANK_MAX_N: usize = 25;
/// Largest combined sample size for which the rank-sum p-value is enumerated.
pub const EXACT_RANK_SUM_MAX_N: usize = 30;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestKind {
    SignedRank,
    RankSum,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
    TDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub test: TestKind,
    /// W⁺ for signed-rank, U of the first sample for rank-sum, ρ for Spearman.
    pub statistic: f64,
    pub p_value: f64,
    /// Rank-biserial coefficient for the Wilcoxon tests, ρ for Spearman.
    pub effect_size: f64,
    pub n: usize,
    pub method: PMethod,
}

impl StatResult {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

/// Which p-value computation to use for the Wilcoxon tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Exact below the size cutoff, normal approximation above.
    #[default]
    Auto,
    Exact,
    Normal,
}

/// Average (mid) ranks, 1-based.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Σ(t³ − t) over tie groups of the given ranks.
fn tie_term(ranks: &[f64]) -> f64 {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &r in ranks {
        *counts.entry((r * 2.0).round() as u64).or_default() += 1;
    }
    counts.values().map(|&t| (t * t * t - t) as f64).sum()
}

fn std_normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

fn two_sided(lower: f64, upper: f64) -> f64 {
    (2.0 * lower.min(upper)).min(1.0)
}

struct SignedRanks {
    ranks: Vec<f64>,
    w_plus: f64,
    w_minus: f64,
}

fn signed_ranks(diffs: &[f64]) -> Result<SignedRanks> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Stats("non-finite difference".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Stats("all paired differences are zero".into()));
    }
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let positive: Vec<bool> = nz.iter().map(|&d| d > 0.0).collect();
    let w_plus = ranks.iter().zip(&positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let w_minus = ranks.iter().zip(&positive).filter(|(_, &p)| !p).map(|(r, _)| r).sum();
    Ok(SignedRanks { ranks, w_plus, w_minus })
}

/// Matched-pairs rank-biserial coefficient (W⁺ − W⁻) / (n(n+1)/2) over the
/// nonzero differences.
pub fn rank_biserial(diffs: &[f64]) -> Result<f64> {
    let sr = signed_ranks(diffs)?;
    let n = sr.ranks.len() as f64;
    Ok((sr.w_plus - sr.w_minus) / (n * (n + 1.0) / 2.0))
}

/// Paired two-sided Wilcoxon signed-rank test. Zero differences are dropped
/// before ranking.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<StatResult> {
    wilcoxon_signed_rank_with(diffs, Method::Auto)
}

pub fn wilcoxon_signed_rank_with(diffs: &[f64], method: Method) -> Result<StatResult> {
    let sr = signed_ranks(diffs)?;
    let n = sr.ranks.len();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let exact = match method {
        Method::Auto => n <= EXACT_SIGNED_RANK_MAX_N,
        Method::Exact => true,
        Method::Normal => false,
    };
    let p_value = if exact {
        // Ranks are multiples of 1/2, so doubled ranks are integers and the
        // null distribution of 2W⁺ is a subset-sum count.
        let doubled: Vec<usize> = sr.ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max + 1];
        counts[0] = 1.0;
        for &d in &doubled {
            for s in (d..=max).rev() {
                counts[s] += counts[s - d];
            }
        }
        let obs = (sr.w_plus * 2.0).round() as usize;
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=obs].iter().sum::<f64>() / all;
        let upper: f64 = counts[obs..].iter().sum::<f64>() / all;
        two_sided(lower, upper)
    } else {
        let mean = total / 2.0;
        let nf = n as f64;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&sr.ranks) / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((sr.w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * std_normal_sf(z)).min(1.0)
        }
    };
    Ok(StatResult {
        test: TestKind::SignedRank,
        statistic: sr.w_plus,
        p_value,
        effect_size: (sr.w_plus - sr.w_minus) / total,
        n,
        method: if exact { PMethod::Exact } else { PMethod::Normal },
    })
}

/// Unpaired two-sided Wilcoxon rank-sum (Mann-Whitney) test. The effect
/// size is the rank-biserial (U_a − U_b) / (n_a n_b).
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<StatResult> {
    wilcoxon_rank_sum_with(a, b, Method::Auto)
}

pub fn wilcoxon_rank_sum_with(a: &[f64], b: &[f64], method: Method) -> Result<StatResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Stats("rank-sum test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite sample value".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let r_a: f64 = ranks[..na].iter().sum();
    let u_a = r_a - (na * (na + 1)) as f64 / 2.0;
    let u_b = (na * nb) as f64 - u_a;
    let exact = match method {
        Method::Auto => n <= EXACT_RANK_SUM_MAX_N,
        Method::Exact => true,
        Method::Normal => false,
    };
    let p_value = if exact {
        // counts[k][s]: subsets of k pooled elements whose doubled ranks sum to s
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![vec![0f64; max + 1]; na + 1];
        counts[0][0] = 1.0;
        for &d in &doubled {
            for k in (1..=na).rev() {
                let (lo, hi) = counts.split_at_mut(k);
                let prev = &lo[k - 1];
                for s in (d..=max).rev() {
                    hi[0][s] += prev[s - d];
                }
            }
        }
        let dist = &counts[na];
        let all: f64 = dist.iter().sum();
        let obs = (r_a * 2.0).round() as usize;
        let lower = dist[..=obs].iter().sum::<f64>() / all;
        let upper = dist[obs..].iter().sum::<f64>() / all;
        two_sided(lower, upper)
    } else {
        let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
        let mean = naf * (nf + 1.0) / 2.0;
        let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term(&ranks) / (nf * (nf - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let z = ((r_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * std_normal_sf(z)).min(1.0)
        }
    };
    Ok(StatResult {
        test: TestKind::RankSum,
        statistic: u_a,
        p_value,
        effect_size: (u_a - u_b) / (na * nb) as f64,
        n,
        method: if exact { PMethod::Exact } else { PMethod::Normal },
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties; the p-value uses
/// the t approximation with n − 2 degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<StatResult> {
    if xs.len() != ys.len() {
        return Err(Error::Stats(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Stats("spearman needs at least 3 pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite input".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(Error::Stats("constant input has no rank correlation".into()));
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys)).clamp(-1.0, 1.0);
    let n = xs.len();
    let df = (n - 2) as f64;
    let p_value = if 1.0 - rho.abs() < 1e-15 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive dof");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(StatResult {
        test: TestKind::Spearman,
        statistic: rho,
        p_value,
        effect_size: rho,
        n,
        method: PMethod::TDistribution,
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (position q·(n − 1) in the sorted sample).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianIqr {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

pub fn median_iqr(values: &[f64]) -> Option<MedianIqr> {
    Some(MedianIqr {
        median: quantile(values, 0.5)?,
        q1: quantile(values, 0.25)?,
        q3: quantile(values, 0.75)?,
        n: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GsGroup {
    /// 3+3
    Low,
    /// 3+4
    Intermediate,
    /// 4+3 and higher
    High,
    Unknown,
}

impl GsGroup {
    pub fn from_gleason(gs: Option<Gleason>) -> Self {
        match gs {
            None => GsGroup::Unknown,
            Some(g) if g.primary >= 4 || g.sum() >= 8 => GsGroup::High,
            Some(g) if g.sum() == 7 => GsGroup::Intermediate,
            Some(_) => GsGroup::Low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SizeGroup {
    /// Below 1 cc.
    Small,
    /// 1 cc inclusive to 2 cc exclusive.
    Medium,
    /// 2 cc and above.
    Large,
    Unknown,
}

impl SizeGroup {
    pub fn from_volume(volume_cc: Option<f64>) -> Self {
        match volume_cc {
            Some(v) if v < 1.0 => SizeGroup::Small,
            Some(v) if v < 2.0 => SizeGroup::Medium,
            Some(v) if v.is_finite() => SizeGroup::Large,
            _ => SizeGroup::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ZoneGroup {
    Pz,
    Tz,
    As,
    Other,
}

impl From<Zone> for ZoneGroup {
    fn from(z: Zone) -> Self {
        match z {
            Zone::Pz => ZoneGroup::Pz,
            Zone::Tz => ZoneGroup::Tz,
            Zone::As => ZoneGroup::As,
            Zone::Other | Zone::Unlabeled => ZoneGroup::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub gs_group: GsGroup,
    pub size_group: SizeGroup,
    pub zone: ZoneGroup,
}

impl GroupKey {
    pub fn new(gleason: Option<Gleason>, volume_cc: Option<f64>, zone: Zone) -> Self {
        Self {
            gs_group: GsGroup::from_gleason(gleason),
            size_group: SizeGroup::from_volume(volume_cc),
            zone: zone.into(),
        }
    }

    pub fn of(lesion: &LesionScore) -> Self {
        Self::new(lesion.gleason, Some(lesion.volume_cc), lesion.zone)
    }
}

/// Indices of items per group along each axis. Every item appears in
/// exactly one cell of each map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Groupings {
    pub by_gs: BTreeMap<GsGroup, Vec<usize>>,
    pub by_size: BTreeMap<SizeGroup, Vec<usize>>,
    pub by_zone: BTreeMap<ZoneGroup, Vec<usize>>,
}

pub fn group_lesions<T>(items: &[T], key: impl Fn(&T) -> GroupKey) -> Groupings {
    let mut g = Groupings::default();
    for (i, item) in items.iter().enumerate() {
        let k = key(item);
        g.by_gs.entry(k.gs_group).or_default().push(i);
        g.by_size.entry(k.size_group).or_default().push(i);
        g.by_zone.entry(k.zone).or_default().push(i);
    }
    g
}

/// Evaluations of one model over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEvaluations {
    pub model: String,
    pub cases: Vec<CaseEvaluation>,
}

impl ModelEvaluations {
    pub fn lesions(&self) -> impl Iterator<Item = (&str, &LesionScore)> {
        self.cases.iter().flat_map(|c| c.lesions.iter().map(move |l| (c.case_id.as_str(), l)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub axis: String,
    pub group: String,
    pub dsc: Option<MedianIqr>,
}

/// Rank-sum comparison of two groups along one axis within a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub axis: String,
    pub group_a: String,
    pub group_b: String,
    pub result: StatResult,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub all_lesions: DatasetSummary,
    /// Lesions with Gleason sum ≥ 7.
    pub dil_lesions: DatasetSummary,
    pub groups: Vec<GroupSummary>,
    pub group_tests: Vec<GroupComparison>,
    /// Lesion DSC vs median lesion ADC, when ADC values were recorded.
    pub adc_correlation: Option<StatResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub model_a: String,
    pub model_b: String,
    pub n_lesions: usize,
    pub median_difference: f64,
    pub p_value: f64,
    pub effect_size: f64,
    pub significant: bool,
    /// Set when every paired difference is zero; p is reported as 1.
    pub all_differences_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub models: Vec<ModelReport>,
    pub pairwise: Vec<PairwiseComparison>,
    pub notes: Vec<String>,
}

fn axis_name<K: Serialize>(k: &K) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn summarize_groups<K: Serialize + Copy + Ord>(
    axis: &str,
    map: &BTreeMap<K, Vec<usize>>,
    dsc: &[f64],
    summaries: &mut Vec<GroupSummary>,
    tests: &mut Vec<GroupComparison>,
    skip: &[K],
) {
    let keys: Vec<K> = map.keys().copied().filter(|k| !skip.contains(k)).collect();
    let values = |k: &K| map[k].iter().map(|&i| dsc[i]).collect::<Vec<_>>();
    for k in &keys {
        summaries.push(GroupSummary {
            axis: axis.to_string(),
            group: axis_name(k),
            dsc: median_iqr(&values(k)),
        });
    }
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            if let Ok(result) = wilcoxon_rank_sum(&values(a), &values(b)) {
                tests.push(GroupComparison {
                    axis: axis.to_string(),
                    group_a: axis_name(a),
                    group_b: axis_name(b),
                    significant: result.significant(),
                    result,
                });
            }
        }
    }
}

fn model_report(m: &ModelEvaluations) -> ModelReport {
    let lesions: Vec<&LesionScore> = m.lesions().map(|(_, l)| l).collect();
    let dsc: Vec<f64> = lesions.iter().map(|l| l.dsc).collect();
    let g = group_lesions(&lesions, |l| GroupKey::of(l));
    let (mut groups, mut group_tests) = (Vec::new(), Vec::new());
    summarize_groups("gleason", &g.by_gs, &dsc, &mut groups, &mut group_tests, &[GsGroup::Unknown]);
    summarize_groups("size", &g.by_size, &dsc, &mut groups, &mut group_tests, &[SizeGroup::Unknown]);
    summarize_groups("zone", &g.by_zone, &dsc, &mut groups, &mut group_tests, &[ZoneGroup::Other]);
    // unlabeled lesions are summarized separately, without tests
    if let Some(ix) = g.by_gs.get(&GsGroup::Unknown) {
        groups.push(GroupSummary {
            axis: "gleason".into(),
            group: "UNKNOWN".into(),
            dsc: median_iqr(&ix.iter().map(|&i| dsc[i]).collect::<Vec<_>>()),
        });
    }
    if let Some(ix) = g.by_zone.get(&ZoneGroup::Other) {
        groups.push(GroupSummary {
            axis: "zone".into(),
            group: "OTHER".into(),
            dsc: median_iqr(&ix.iter().map(|&i| dsc[i]).collect::<Vec<_>>()),
        });
    }
    let (adc, adc_dsc): (Vec<f64>, Vec<f64>) =
        lesions.iter().filter_map(|l| l.median_adc.map(|a| (a, l.dsc))).unzip();
    ModelReport {
        model: m.model.clone(),
        all_lesions: summarize_dataset(&m.cases, |_| true),
        dil_lesions: summarize_dataset(&m.cases, LesionScore::is_dil),
        groups,
        group_tests,
        adc_correlation: spearman(&adc, &adc_dsc).ok(),
    }
}

/// Per-model summaries plus pairwise signed-rank comparisons of lesion DSC
/// between every pair of models on their shared lesions.
pub fn build_report(models: &[ModelEvaluations]) -> Result<EvaluationReport> {
    if models.is_empty() {
        return Err(Error::Stats("report needs at least one model".into()));
    }
    let reports = models.iter().map(model_report).collect();
    let keyed = |m: &ModelEvaluations| -> BTreeMap<(String, u16), f64> {
        m.lesions().map(|(c, l)| ((c.to_string(), l.lesion_id), l.dsc)).collect()
    };
    let mut pairwise = Vec::new();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            let (ka, kb) = (keyed(a), keyed(b));
            let sa: BTreeSet<_> = ka.keys().collect();
            let sb: BTreeSet<_> = kb.keys().collect();
            if sa != sb {
                return Err(Error::Stats(format!(
                    "models {} and {} were evaluated on different lesion sets",
                    a.model, b.model
                )));
            }
            let diffs: Vec<f64> = ka.iter().map(|(k, v)| v - kb[k]).collect();
            let median_difference = quantile(&diffs, 0.5).unwrap_or(0.0);
            let (p_value, effect_size, zero) = match wilcoxon_signed_rank(&diffs) {
                Ok(r) => (r.p_value, r.effect_size, false),
                Err(_) => (1.0, 0.0, true),
            };
            pairwise.push(PairwiseComparison {
                model_a: a.model.clone(),
                model_b: b.model.clone(),
                n_lesions: diffs.len(),
                median_difference,
                p_value,
                effect_size,
                significant: p_value < SIGNIFICANCE_LEVEL,
                all_differences_zero: zero,
            });
        }
    }
    Ok(EvaluationReport {
        models: reports,
        pairwise,
        notes: vec![
            "false positives are counted over all evaluated cases, including for the Gleason >= 7 rows".into(),
            "quartiles use linear interpolation between order statistics".into(),
        ],
    })
}
