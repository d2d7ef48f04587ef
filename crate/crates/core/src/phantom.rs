//! Synthetic ADC phantoms: an ellipsoidal gland with darker ellipsoidal
//! lesions and additive Gaussian noise.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{save_manifest, CaseManifest, Gleason, LesionRecord, Split, Zone};
use crate::volumes::{save_volume, Geometry, LabelVolume, ScalarVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    #[default]
    NiftiGz,
    Raw,
}

impl VolumeFormat {
    fn extension(self) -> &'static str {
        match self {
            VolumeFormat::NiftiGz => "nii.gz",
            VolumeFormat::Raw => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Grid size (nx, ny, nz).
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    /// Gland semi-axes (x, y, z) in mm.
    pub gland_semi_axes_mm: [f64; 3],
    /// Random shift of the gland centre from the grid centre, per axis, mm.
    pub gland_jitter_mm: f64,
    /// Inclusive range of lesions per case.
    pub lesion_count: [usize; 2],
    pub lesion_median_cc: f64,
    /// Log-scale spread of the lesion volume distribution.
    pub lesion_log_sigma: f64,
    pub lesion_volume_range_cc: [f64; 2],
    /// Allowed semi-axis lengths in mm.
    pub lesion_radius_range_mm: [f64; 2],
    /// Minimum surface gap between lesions, mm.
    pub lesion_gap_mm: f64,
    pub background_adc: f32,
    pub gland_adc: f32,
    pub lesion_adc: f32,
    pub noise_sigma: f32,
    /// Relative weights of Gleason 3+3, 3+4, 4+3 and 4+4.
    pub gleason_weights: [f64; 4],
    /// Normalized gland radius above which a lesion is tagged PZ.
    pub pz_radius_cutoff: f64,
    pub max_retries: usize,
    pub format: VolumeFormat,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128, 128, 20],
            spacing: [0.625, 0.625, 3.0],
            gland_semi_axes_mm: [25.0, 20.0, 18.0],
            gland_jitter_mm: 4.0,
            lesion_count: [1, 3],
            lesion_median_cc: 1.0,
            lesion_log_sigma: 0.6,
            lesion_volume_range_cc: [0.3, 3.0],
            lesion_radius_range_mm: [3.0, 14.0],
            lesion_gap_mm: 2.0,
            background_adc: 1000.0,
            gland_adc: 1400.0,
            lesion_adc: 700.0,
            noise_sigma: 50.0,
            // Gleason 6, 3+4, 4+3, >= 8 counts of the internal cohort
            gleason_weights: [34.0, 112.0, 26.0, 19.0],
            pz_radius_cutoff: 0.6,
            max_retries: 2000,
            format: VolumeFormat::NiftiGz,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("phantom: {m}")));
        if self.dims.contains(&0) {
            return bad("grid dimensions must be positive");
        }
        Geometry::with_spacing(self.spacing).validate()?;
        if self.gland_semi_axes_mm.iter().any(|&a| !(a > 0.0)) {
            return bad("gland semi-axes must be positive");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        if self.lesion_count[0] > self.lesion_count[1] {
            return bad("lesion_count range is reversed");
        }
        let [rmin, rmax] = self.lesion_radius_range_mm;
        if !(rmin > 0.0 && rmax >= rmin) {
            return bad("lesion radii must be positive with min <= max");
        }
        let [vmin, vmax] = self.lesion_volume_range_cc;
        if !(vmin > 0.0 && vmax >= vmin && self.lesion_median_cc > 0.0 && self.lesion_log_sigma >= 0.0) {
            return bad("invalid lesion volume distribution");
        }
        if !(self.lesion_adc < self.gland_adc) {
            return bad("lesion ADC must be below gland ADC");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if self.gleason_weights.iter().any(|&w| !(w >= 0.0)) || self.gleason_weights.iter().sum::<f64>() <= 0.0 {
            return bad("gleason weights must be non-negative with a positive sum");
        }
        Ok(())
    }

    fn voxel_mm3(&self) -> f64 {
        self.spacing.iter().map(|&s| s as f64).product()
    }

    fn geometry(&self) -> Geometry {
        Geometry::with_spacing(self.spacing)
    }

    /// Position (x, y, z) in mm of voxel centre (i, j, k).
    fn position(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| idx[a] as f64 * self.spacing[a] as f64)
    }
}

/// Analytic description of a generated lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomLesion {
    pub id: u16,
    /// Centre (x, y, z) in mm, grid frame.
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    /// In-plane rotation, radians.
    pub angle: f64,
    pub analytic_volume_cc: f64,
    pub voxel_count: usize,
    pub normalized_gland_radius: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub image: ScalarVolume,
    pub mask: LabelVolume,
    pub prostate: LabelVolume,
    pub records: Vec<LesionRecord>,
    pub lesions: Vec<PhantomLesion>,
}

#[derive(Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
    cos: f64,
    sin: f64,
}

impl Ellipsoid {
    /// Covers the voxelized lesion (which may reach slightly past norm 1)
    /// plus a margin in mm.
    fn grown(&self, margin: f64) -> Ellipsoid {
        Ellipsoid { axes: self.axes.map(|a| a * 1.1 + margin), ..*self }
    }

    fn norm(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let u = self.cos * d[0] + self.sin * d[1];
        let v = -self.sin * d[0] + self.cos * d[1];
        ((u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) + (d[2] / self.axes[2]).powi(2)).sqrt()
    }
}

fn gleason_for(index: usize) -> Gleason {
    let (p, s) = [(3, 3), (3, 4), (4, 3), (4, 4)][index];
    Gleason::new(p, s).expect("valid pattern")
}

/// Picks exactly `count` voxels of smallest ellipsoidal norm, so the mask
/// volume equals `count` voxels regardless of partial-volume effects.
fn voxelize(cfg: &PhantomConfig, e: &Ellipsoid, count: usize) -> Vec<([usize; 3], f64)> {
    let reach = e.axes.iter().cloned().fold(0.0, f64::max) * 1.6;
    let range = |a: usize| {
        let s = cfg.spacing[a] as f64;
        let lo = ((e.center[a] - reach) / s).floor().max(0.0) as usize;
        let hi = (((e.center[a] + reach) / s).ceil() as usize).min(cfg.dims[a] - 1);
        lo..=hi
    };
    let mut cand = Vec::new();
    for k in range(2) {
        for j in range(1) {
            for i in range(0) {
                let r = e.norm(cfg.position([i, j, k]));
                if r <= 1.5 {
                    cand.push(([i, j, k], r));
                }
            }
        }
    }
    cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0[2].cmp(&b.0[2])).then(a.0[1].cmp(&b.0[1])).then(a.0[0].cmp(&b.0[0])));
    cand.truncate(count);
    cand
}

/// Generates one phantom case from `rng`.
pub fn generate_case(cfg: &PhantomConfig, rng: &mut impl Rng) -> Result<PhantomCase> {
    cfg.validate()?;
    let [nx, ny, nz] = cfg.dims;
    let extent = cfg.position([nx - 1, ny - 1, nz - 1]);
    let jitter = cfg.gland_jitter_mm.abs();
    let gland = Ellipsoid {
        center: std::array::from_fn(|a| {
            extent[a] / 2.0 + if jitter > 0.0 && a < 2 { rng.random_range(-jitter..=jitter) } else { 0.0 }
        }),
        axes: cfg.gland_semi_axes_mm,
        cos: 1.0,
        sin: 0.0,
    };
    let mut gland_norm = Array3::<f64>::zeros((nz, ny, nx));
    for ((k, j, i), v) in gland_norm.indexed_iter_mut() {
        *v = gland.norm(cfg.position([i, j, k]));
    }

    let n_lesions = rng.random_range(cfg.lesion_count[0]..=cfg.lesion_count[1]);
    let volume_dist = LogNormal::new(cfg.lesion_median_cc.ln(), cfg.lesion_log_sigma)
        .map_err(|e| Error::Config(format!("lesion volume distribution: {e}")))?;
    let gs_dist = WeightedIndex::new(cfg.gleason_weights)
        .map_err(|e| Error::Config(format!("gleason weights: {e}")))?;
    let voxel_mm3 = cfg.voxel_mm3();
    let [rmin, rmax] = cfg.lesion_radius_range_mm;

    let mut mask = Array3::<u16>::zeros((nz, ny, nx));
    let mut lesions: Vec<PhantomLesion> = Vec::new();
    let mut placed_shapes: Vec<Ellipsoid> = Vec::new();
    let mut records = Vec::new();
    for id in 1..=n_lesions as u16 {
        let mut volume_cc = 0.0;
        let mut count = 0;
        let mut placed = None;
        for attempt in 0..cfg.max_retries {
            // a crowded gland gets a fresh volume draw every quarter of the budget
            if attempt % cfg.max_retries.div_ceil(4) == 0 {
                volume_cc = volume_dist
                    .sample(rng)
                    .clamp(cfg.lesion_volume_range_cc[0], cfg.lesion_volume_range_cc[1]);
                count = ((volume_cc * 1000.0 / voxel_mm3).round() as usize).max(2);
            }
            let ratio_y = rng.random_range(0.75..1.3);
            let ratio_z = rng.random_range(0.8..1.25);
            let a = (3.0 * volume_cc * 1000.0 / (4.0 * std::f64::consts::PI * ratio_y * ratio_z)).cbrt();
            let axes = [a, a * ratio_y, a * ratio_z];
            if axes.iter().any(|&r| r < rmin || r > rmax) {
                continue;
            }
            // centre sampled uniformly inside the inner 85% of the gland
            let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if len == 0.0 || len > 1.0 {
                continue;
            }
            let s = 0.85;
            let center: [f64; 3] = std::array::from_fn(|k| gland.center[k] + dir[k] * s * gland.axes[k]);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let e = Ellipsoid { center, axes, cos: angle.cos(), sin: angle.sin() };
            let voxels = voxelize(cfg, &e, count);
            if voxels.len() < count || voxels.iter().any(|(v, _)| gland_norm[[v[2], v[1], v[0]]] >= 1.0) {
                continue;
            }
            let clash = voxels.iter().any(|(v, _)| {
                let p = cfg.position(*v);
                placed_shapes.iter().any(|o: &Ellipsoid| o.grown(cfg.lesion_gap_mm).norm(p) <= 1.0)
            });
            if clash {
                continue;
            }
            placed = Some((e, angle, voxels));
            break;
        }
        let (e, angle, voxels) = placed.ok_or_else(|| {
            Error::Placement(format!("lesion {id} ({volume_cc:.2} cc) after {} attempts", cfg.max_retries))
        })?;
        for (v, _) in &voxels {
            mask[[v[2], v[1], v[0]]] = id;
        }
        let radius = gland.norm(e.center);
        placed_shapes.push(e);
        let zone = if radius > cfg.pz_radius_cutoff { Zone::Pz } else { Zone::Tz };
        records.push(LesionRecord {
            lesion_id: id,
            gleason: Some(gleason_for(gs_dist.sample(rng))),
            zone,
            volume_cc: Some(voxels.len() as f64 * voxel_mm3 / 1000.0),
        });
        lesions.push(PhantomLesion {
            id,
            center_mm: e.center,
            semi_axes_mm: e.axes,
            angle,
            analytic_volume_cc: 4.0 / 3.0 * std::f64::consts::PI * e.axes.iter().product::<f64>() / 1000.0,
            voxel_count: voxels.len(),
            normalized_gland_radius: radius,
        });
    }

    let noise = Normal::new(0.0f32, cfg.noise_sigma).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut image = Array3::<f32>::zeros((nz, ny, nx));
    for (v, (&g, &m)) in image.iter_mut().zip(gland_norm.iter().zip(mask.iter())) {
        let base = if m > 0 {
            cfg.lesion_adc
        } else if g < 1.0 {
            cfg.gland_adc
        } else {
            cfg.background_adc
        };
        *v = if cfg.noise_sigma > 0.0 { base + noise.sample(rng) } else { base };
    }
    let prostate = gland_norm.mapv(|g| u16::from(g < 1.0));
    let geometry = cfg.geometry();
    Ok(PhantomCase {
        image: Volume::new(image, geometry)?,
        mask: Volume::new(mask, geometry)?,
        prostate: Volume::new(prostate, geometry)?,
        records,
        lesions,
    })
}

/// Per-case RNG: stream `index` of the dataset seed.
pub fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Writes `n_cases` phantoms under `dir/<case_id>/` plus `dir/manifest.json`
/// and returns the manifest entries.
pub fn generate_dataset(cfg: &PhantomConfig, n_cases: usize, dir: impl AsRef<Path>) -> Result<Vec<CaseManifest>> {
    cfg.validate()?;
    let dir = dir.as_ref();
    let ext = cfg.format.extension();
    let mut cases = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let case_id = format!("phantom_{i:04}");
        let case = generate_case(cfg, &mut case_rng(cfg.seed, i as u64))?;
        let case_dir = dir.join(&case_id);
        let path = |stem: &str| -> PathBuf { case_dir.join(format!("{stem}.{ext}")) };
        save_volume(&case.image, path("adc"))?;
        save_volume(&case.mask, path("lesions"))?;
        save_volume(&case.prostate, path("prostate"))?;
        cases.push(CaseManifest {
            case_id,
            image_path: path("adc"),
            mask_path: path("lesions"),
            prostate_mask_path: Some(path("prostate")),
            fold: None,
            split: Split::Train,
            lesions: case.records,
        });
    }
    save_manifest(&cases, dir.join("manifest.json"))?;
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::Connectivity;
    use crate::manifest::load_manifest;
    use crate::preprocess::clean_small_components;
    use crate::volumes::lesion_volume_cc;

    fn small() -> PhantomConfig {
        PhantomConfig {
            dims: [64, 64, 16],
            gland_semi_axes_mm: [16.0, 14.0, 18.0],
            lesion_count: [1, 2],
            lesion_median_cc: 0.5,
            lesion_volume_range_cc: [0.3, 1.0],
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_lesions_have_exact_adc() {
        let cfg = PhantomConfig { noise_sigma: 0.0, lesion_count: [2, 2], ..Default::default() };
        let case = generate_case(&cfg, &mut case_rng(1, 0)).unwrap();
        let mut n = 0;
        for (&m, &v) in case.mask.data().iter().zip(case.image.data()) {
            if m > 0 {
                assert_eq!(v, 700.0);
                n += 1;
            }
        }
        assert!(n > 0);
        assert_eq!(case.records.len(), 2);
    }

    #[test]
    fn mask_volume_within_one_voxel_of_analytic() {
        let cfg = PhantomConfig {
            lesion_count: [1, 1],
            lesion_log_sigma: 0.0,
            lesion_median_cc: 1.0,
            ..Default::default()
        };
        let voxel_cc = cfg.voxel_mm3() / 1000.0;
        for seed in 0..5 {
            let case = generate_case(&cfg, &mut case_rng(seed, 0)).unwrap();
            let l = &case.lesions[0];
            assert!((l.analytic_volume_cc - 1.0).abs() < 1e-9);
            let measured = lesion_volume_cc(&case.mask, 1).unwrap();
            assert!((measured - l.analytic_volume_cc).abs() <= voxel_cc);
            assert_eq!(case.records[0].volume_cc, Some(measured));
        }
    }

    #[test]
    fn same_seed_same_case() {
        let cfg = PhantomConfig::default();
        let a = generate_case(&cfg, &mut case_rng(9, 3)).unwrap();
        let b = generate_case(&cfg, &mut case_rng(9, 3)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.records, b.records);
        let c = generate_case(&cfg, &mut case_rng(9, 4)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn lesions_inside_gland_and_survive_cleanup() {
        let cfg = PhantomConfig { lesion_count: [3, 3], ..Default::default() };
        for seed in 0..6 {
            let case = generate_case(&cfg, &mut case_rng(seed, 0)).unwrap();
            for (&m, &p) in case.mask.data().iter().zip(case.prostate.data()) {
                assert!(m == 0 || p == 1);
            }
            let cleaned = clean_small_components(&case.mask, 2, Connectivity::Full);
            assert_eq!(cleaned, case.mask);
            for l in &case.lesions {
                let zone = case.records[l.id as usize - 1].zone;
                assert_eq!(zone == Zone::Pz, l.normalized_gland_radius > cfg.pz_radius_cutoff);
            }
        }
    }

    #[test]
    fn contrast_exceeds_three_sigma() {
        let cfg = PhantomConfig::default();
        assert!(cfg.gland_adc - cfg.lesion_adc > 3.0 * cfg.noise_sigma);
        assert!((cfg.background_adc - cfg.lesion_adc).abs() > 3.0 * cfg.noise_sigma);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = PhantomConfig { lesion_adc: 1500.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PhantomConfig { lesion_radius_range_mm: [0.0, 5.0], ..Default::default() };
        assert!(bad.validate().is_err());
        // a lesion that cannot fit the gland
        let tight = PhantomConfig {
            gland_semi_axes_mm: [4.0, 4.0, 4.0],
            lesion_count: [1, 1],
            max_retries: 20,
            ..Default::default()
        };
        assert!(matches!(generate_case(&tight, &mut case_rng(0, 0)), Err(Error::Placement(_))));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig { seed: 5, ..small() };
        let cases = generate_dataset(&cfg, 8, dir.path()).unwrap();
        assert_eq!(cases.len(), 8);
        let loaded = load_manifest(dir.path().join("manifest.json")).unwrap().into_result().unwrap();
        assert_eq!(loaded.len(), 8);
        for (a, b) in cases.iter().zip(&loaded) {
            assert_eq!(a.lesions, b.lesions);
        }
    }

    #[test]
    fn zero_lesion_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig { lesion_count: [0, 0], format: VolumeFormat::Raw, ..small() };
        generate_dataset(&cfg, 2, dir.path()).unwrap();
        let loaded = load_manifest(dir.path().join("manifest.json")).unwrap().into_result().unwrap();
        assert!(loaded.iter().all(|c| c.lesions.is_empty()));
    }

    #[test]
    fn median_lesion_volume_tracks_config() {
        let cfg = PhantomConfig { noise_sigma: 0.0, ..Default::default() };
        let mut vols = Vec::new();
        for i in 0..100 {
            let case = generate_case(&cfg, &mut case_rng(11, i)).unwrap();
            vols.extend(case.records.iter().filter_map(|r| r.volume_cc));
        }
        let median = crate::stats::quantile(&vols, 0.5).unwrap();
        assert!((median - 1.0).abs() < 0.2, "median {median}");
    }
}
