//! Geometric standardization, cropping, label cleanup, slice stacking and
//! label upsampling.

use std::path::Path;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::components::{label_by, Connectivity};
use crate::error::{io_err, json_err, Error, Result};
use crate::hashing::config_hash;
use crate::manifest::CaseManifest;
use crate::volumes::{
    load_label_volume, load_scalar_volume, save_volume, Geometry, LabelVolume, ScalarVolume, Volume,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// ADC values pass through unchanged.
    #[default]
    None,
    /// Per-volume zero mean, unit variance.
    ZScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_spacing: [f32; 3],
    /// In-plane crop as (width, height).
    pub crop_size: [usize; 2],
    pub max_crop: usize,
    pub min_component_voxels: usize,
    pub connectivity: Connectivity,
    /// Neighbouring slices on each side; 2k + 1 channels.
    pub slice_context: usize,
    /// In-plane size for the 256×256 network paths, as (width, height).
    pub upsample_size: [usize; 2],
    pub normalization: Normalization,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing: [0.625, 0.625, 3.0],
            crop_size: [128, 128],
            max_crop: 1024,
            min_component_voxels: 2,
            connectivity: Connectivity::Full,
            slice_context: 2,
            upsample_size: [256, 256],
            normalization: Normalization::None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let even_pos = |v: &[usize; 2]| v.iter().all(|&d| d > 0 && d % 2 == 0);
        if !even_pos(&self.crop_size) || !even_pos(&self.upsample_size) {
            return Err(Error::Config("crop_size and upsample_size must be even and positive".into()));
        }
        if self.crop_size.iter().any(|&d| d > self.max_crop) {
            return Err(Error::Config(format!(
                "crop size {:?} exceeds the cap of {}",
                self.crop_size, self.max_crop
            )));
        }
        Geometry::with_spacing(self.target_spacing).validate()
    }

    pub fn channels(&self) -> usize {
        2 * self.slice_context + 1
    }
}

fn resampled_dims(dims: [usize; 3], from: [f32; 3], to: [f32; 3]) -> [usize; 3] {
    std::array::from_fn(|a| ((dims[a] as f64 * from[a] as f64 / to[a] as f64).round() as usize).max(1))
}

/// Source index (x, y, z order) sampled by output index `i` along axis `a`.
fn source_coord(i: usize, out_spacing: f32, in_spacing: f32) -> f64 {
    (i as f64 + 0.5) * out_spacing as f64 / in_spacing as f64 - 0.5
}

fn output_geometry(g: &Geometry, out_spacing: [f32; 3]) -> Geometry {
    let first = std::array::from_fn(|a| source_coord(0, out_spacing[a], g.spacing[a]));
    Geometry {
        spacing: out_spacing,
        origin: g.index_to_world(first).map(|v| v as f32),
        direction: g.direction,
    }
}

/// Trilinear resampling of an image onto the grid with `dims` (x, y, z)
/// voxels of size `spacing`, aligned so that both grids span the same
/// physical box when `dims * spacing` matches.
pub fn resample_scalar_to(vol: &ScalarVolume, dims: [usize; 3], spacing: [f32; 3]) -> Result<ScalarVolume> {
    let src = vol.data();
    let [nx, ny, nz] = vol.dims_xyz();
    let g = vol.geometry();
    let coords = |a: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        (0..dims[a])
            .map(|i| {
                let c = source_coord(i, spacing[a], g.spacing[a]).clamp(0.0, (n_in - 1) as f64);
                let lo = c.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (c - lo as f64) as f32)
            })
            .collect()
    };
    let (cx, cy, cz) = (coords(0, nx), coords(1, ny), coords(2, nz));
    let out = Array3::from_shape_fn((dims[2], dims[1], dims[0]), |(k, j, i)| {
        let (x0, x1, fx) = cx[i];
        let (y0, y1, fy) = cy[j];
        let (z0, z1, fz) = cz[k];
        let lerp = |a: f32, b: f32, t: f32| if t == 0.0 { a } else { a + (b - a) * t };
        let plane = |z: usize| {
            let r0 = lerp(src[[z, y0, x0]], src[[z, y0, x1]], fx);
            let r1 = lerp(src[[z, y1, x0]], src[[z, y1, x1]], fx);
            lerp(r0, r1, fy)
        };
        lerp(plane(z0), plane(z1), fz)
    });
    Volume::new(out, output_geometry(g, spacing))
}

/// Nearest-neighbour resampling; the output value set is a subset of the
/// input's.
pub fn resample_nearest_to<T: Copy>(vol: &Volume<T>, dims: [usize; 3], spacing: [f32; 3]) -> Result<Volume<T>> {
    let src = vol.data();
    let [nx, ny, nz] = vol.dims_xyz();
    let g = vol.geometry();
    let idx = |a: usize, n_in: usize| -> Vec<usize> {
        (0..dims[a])
            .map(|i| {
                let c = source_coord(i, spacing[a], g.spacing[a]);
                (c + 0.5).floor().clamp(0.0, (n_in - 1) as f64) as usize
            })
            .collect()
    };
    let (ix, iy, iz) = (idx(0, nx), idx(1, ny), idx(2, nz));
    let out = Array3::from_shape_fn((dims[2], dims[1], dims[0]), |(k, j, i)| src[[iz[k], iy[j], ix[i]]]);
    Volume::new(out, output_geometry(g, spacing))
}

/// Resamples an image to `target_spacing` with trilinear interpolation.
pub fn resample_volume(vol: &ScalarVolume, target_spacing: [f32; 3]) -> Result<ScalarVolume> {
    if vol.spacing() == target_spacing {
        return Ok(vol.clone());
    }
    let dims = resampled_dims(vol.dims_xyz(), vol.spacing(), target_spacing);
    resample_scalar_to(vol, dims, target_spacing)
}

/// Resamples a label map to `target_spacing` with nearest-neighbour
/// interpolation.
pub fn resample_labels(vol: &LabelVolume, target_spacing: [f32; 3]) -> Result<LabelVolume> {
    if vol.spacing() == target_spacing {
        return Ok(vol.clone());
    }
    let dims = resampled_dims(vol.dims_xyz(), vol.spacing(), target_spacing);
    resample_nearest_to(vol, dims, target_spacing)
}

/// Placement of an in-plane crop inside its source grid. Offsets may be
/// negative when the window extends past the image border.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: isize,
    pub y0: isize,
    pub width: usize,
    pub height: usize,
    /// Source grid size (nx, ny, nz).
    pub source_dims: [usize; 3],
}

/// In-plane crop centre: centroid of a prostate mask if given, else the
/// grid centre. Returned as (x, y) voxel indices.
pub fn crop_center(dims_xyz: [usize; 3], prostate: Option<&LabelVolume>) -> [usize; 2] {
    if let Some(mask) = prostate {
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0usize);
        for ((_, y, x), &v) in mask.data().indexed_iter() {
            if v != 0 {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
        if n > 0 {
            return [(sx / n as f64).round() as usize, (sy / n as f64).round() as usize];
        }
    }
    [dims_xyz[0] / 2, dims_xyz[1] / 2]
}

/// Cuts a `crop_size` (width, height) window centred on `center_xy`,
/// zero-padding whatever falls outside the source.
pub fn crop_to_roi<T: Copy + Default>(
    vol: &Volume<T>,
    center_xy: [usize; 2],
    crop_size: [usize; 2],
    max_crop: usize,
) -> Result<(Volume<T>, CropWindow)> {
    let [w, h] = crop_size;
    if w == 0 || h == 0 || w > max_crop || h > max_crop {
        return Err(Error::InvalidArgument(format!(
            "crop size {crop_size:?} outside 1..={max_crop}"
        )));
    }
    let dims = vol.dims_xyz();
    let window = CropWindow {
        x0: center_xy[0] as isize - (w / 2) as isize,
        y0: center_xy[1] as isize - (h / 2) as isize,
        width: w,
        height: h,
        source_dims: dims,
    };
    let src = vol.data();
    let out = Array3::from_shape_fn((dims[2], h, w), |(z, j, i)| {
        let (x, y) = (window.x0 + i as isize, window.y0 + j as isize);
        if x < 0 || y < 0 || x >= dims[0] as isize || y >= dims[1] as isize {
            T::default()
        } else {
            src[[z, y as usize, x as usize]]
        }
    });
    let g = vol.geometry();
    let geometry = Geometry {
        origin: g
            .index_to_world([window.x0 as f64, window.y0 as f64, 0.0])
            .map(|v| v as f32),
        ..*g
    };
    Ok((Volume::new(out, geometry)?, window))
}

/// Places a cropped volume back into its source frame; voxels outside the
/// window are zero.
pub fn uncrop<T: Copy + Default>(cropped: &Volume<T>, window: &CropWindow, source: &Geometry) -> Result<Volume<T>> {
    let [nx, ny, nz] = window.source_dims;
    let (cz, ch, cw) = cropped.data().dim();
    if cz != nz || ch != window.height || cw != window.width {
        return Err(Error::ShapeMismatch(format!(
            "cropped volume {:?} does not match window {window:?}",
            cropped.data().dim()
        )));
    }
    let mut out = Array3::from_elem((nz, ny, nx), T::default());
    let src = cropped.data();
    for z in 0..nz {
        for j in 0..ch {
            let y = window.y0 + j as isize;
            if y < 0 || y >= ny as isize {
                continue;
            }
            for i in 0..cw {
                let x = window.x0 + i as isize;
                if x >= 0 && x < nx as isize {
                    out[[z, y as usize, x as usize]] = src[[z, j, i]];
                }
            }
        }
    }
    Volume::new(out, *source)
}

/// Sets connected components (same label value) smaller than `min_voxels`
/// to background.
pub fn clean_small_components(mask: &LabelVolume, min_voxels: usize, connectivity: Connectivity) -> LabelVolume {
    let lab = label_by(mask.data(), connectivity, |&v| v != 0, |a, b| a == b);
    let data = ndarray::Zip::from(mask.data()).and(&lab.labels).map_collect(|&v, &l| {
        if l > 0 && lab.sizes[l as usize - 1] < min_voxels {
            0
        } else {
            v
        }
    });
    mask.with_data(data).expect("same shape")
}

/// Stacks slice `slice_index` with `k` neighbours on each side into a
/// (2k + 1, ny, nx) sample ordered inferior to superior. Neighbours past the
/// first or last slice repeat the edge slice.
pub fn stack_slices(vol: &ScalarVolume, slice_index: usize, k: usize) -> Result<Array3<f32>> {
    let depth = vol.depth();
    if slice_index >= depth {
        return Err(Error::InvalidArgument(format!(
            "slice index {slice_index} outside 0..{depth}"
        )));
    }
    let (_, ny, nx) = vol.data().dim();
    let mut out = Array3::<f32>::zeros((2 * k + 1, ny, nx));
    for c in 0..=2 * k {
        let z = (slice_index as isize + c as isize - k as isize).clamp(0, depth as isize - 1) as usize;
        out.slice_mut(s![c, .., ..]).assign(&vol.data().slice(s![z, .., ..]));
    }
    Ok(out)
}

/// Bilinear resize with half-pixel centres and clamped borders. Equal sizes
/// give the identity.
pub fn bilinear_resize(img: &Array2<f32>, out_hw: (usize, usize)) -> Array2<f32> {
    let (h, w) = img.dim();
    let (oh, ow) = out_hw;
    if (h, w) == (oh, ow) {
        return img.clone();
    }
    let taps = |o: usize, n_in: usize, n_out: usize| {
        let c = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = c.floor() as usize;
        (lo, (lo + 1).min(n_in - 1), (c - lo as f64) as f32)
    };
    let ys: Vec<_> = (0..oh).map(|o| taps(o, h, oh)).collect();
    let xs: Vec<_> = (0..ow).map(|o| taps(o, w, ow)).collect();
    Array2::from_shape_fn((oh, ow), |(j, i)| {
        let (y0, y1, fy) = ys[j];
        let (x0, x1, fx) = xs[i];
        let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
        let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Nearest-neighbour resize: output pixel (j, i) takes input
/// (⌊j·h/oh⌋, ⌊i·w/ow⌋).
pub fn nearest_resize<T: Copy>(img: &Array2<T>, out_hw: (usize, usize)) -> Array2<T> {
    let (h, w) = img.dim();
    let (oh, ow) = out_hw;
    Array2::from_shape_fn((oh, ow), |(j, i)| img[[j * h / oh, i * w / ow]])
}

/// Real-valued training labels by bilinear upsampling of a binary mask;
/// `size` is (width, height).
pub fn make_smoothed_labels(mask: &Array2<f32>, size: [usize; 2]) -> Array2<f32> {
    bilinear_resize(mask, (size[1], size[0])).mapv(|v| v.clamp(0.0, 1.0))
}

/// Binary training labels by nearest-neighbour upsampling; `size` is
/// (width, height).
pub fn make_binary_labels(mask: &Array2<f32>, size: [usize; 2]) -> Array2<f32> {
    nearest_resize(mask, (size[1], size[0]))
}

pub fn normalize(vol: &ScalarVolume, mode: Normalization) -> ScalarVolume {
    match mode {
        Normalization::None => vol.clone(),
        Normalization::ZScore => {
            let n = vol.data().len() as f64;
            let mean = vol.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = vol.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt().max(1e-12);
            vol.map(|&v| ((v as f64 - mean) / sd) as f32)
        }
    }
}

/// Bookkeeping stored next to each preprocessed case so predictions can be
/// mapped back to the original frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub case_id: String,
    pub crop: CropWindow,
    pub original_geometry: Geometry,
    pub original_dims: [usize; 3],
    pub resampled_geometry: Geometry,
    pub config_hash: String,
}

impl Sidecar {
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

/// One case after resampling, cleanup and cropping.
#[derive(Debug, Clone)]
pub struct PreprocessedCase {
    pub image: ScalarVolume,
    pub mask: LabelVolume,
    pub prostate: Option<LabelVolume>,
    pub sidecar: Sidecar,
}

pub fn preprocess_volumes(
    case_id: &str,
    image: &ScalarVolume,
    mask: &LabelVolume,
    prostate: Option<&LabelVolume>,
    config: &PreprocessConfig,
) -> Result<PreprocessedCase> {
    config.validate()?;
    if image.data().dim() != mask.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "{case_id}: image {:?} vs mask {:?}",
            image.data().dim(),
            mask.data().dim()
        )));
    }
    let img = normalize(&resample_volume(image, config.target_spacing)?, config.normalization);
    let msk = resample_labels(mask, config.target_spacing)?;
    let msk = clean_small_components(&msk, config.min_component_voxels, config.connectivity);
    let pro = prostate.map(|p| resample_labels(p, config.target_spacing)).transpose()?;
    let center = crop_center(img.dims_xyz(), pro.as_ref());
    let (img_c, window) = crop_to_roi(&img, center, config.crop_size, config.max_crop)?;
    let (msk_c, _) = crop_to_roi(&msk, center, config.crop_size, config.max_crop)?;
    let pro_c = pro
        .as_ref()
        .map(|p| crop_to_roi(p, center, config.crop_size, config.max_crop).map(|r| r.0))
        .transpose()?;
    Ok(PreprocessedCase {
        sidecar: Sidecar {
            case_id: case_id.to_string(),
            crop: window,
            original_geometry: *image.geometry(),
            original_dims: image.dims_xyz(),
            resampled_geometry: *img.geometry(),
            config_hash: config_hash(config),
        },
        image: img_c,
        mask: msk_c,
        prostate: pro_c,
    })
}

pub fn preprocess_case(case: &CaseManifest, config: &PreprocessConfig) -> Result<PreprocessedCase> {
    let image = load_scalar_volume(&case.image_path)?;
    let mask = load_label_volume(&case.mask_path)?;
    let prostate = case.prostate_mask_path.as_ref().map(load_label_volume).transpose()?;
    preprocess_volumes(&case.case_id, &image, &mask, prostate.as_ref(), config)
}

/// Maps a prediction made on the preprocessed grid back onto the original
/// image grid: un-crop, then resample (linear for probabilities).
pub fn restore_probability(pred: &ScalarVolume, sidecar: &Sidecar) -> Result<ScalarVolume> {
    let full = uncrop(pred, &sidecar.crop, &sidecar.resampled_geometry)?;
    if sidecar.resampled_geometry.spacing == sidecar.original_geometry.spacing
        && full.dims_xyz() == sidecar.original_dims
    {
        return Volume::new(full.into_data(), sidecar.original_geometry);
    }
    let out = resample_scalar_to(&full, sidecar.original_dims, sidecar.original_geometry.spacing)?;
    Volume::new(out.into_data(), sidecar.original_geometry)
}

/// Writes `image.nii.gz`, `mask.nii.gz`, optional `prostate.nii.gz` and
/// `sidecar.json` into `dir`.
pub fn save_preprocessed(case: &PreprocessedCase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_volume(&case.image, dir.join("image.nii.gz"))?;
    save_volume(&case.mask, dir.join("mask.nii.gz"))?;
    if let Some(p) = &case.prostate {
        save_volume(p, dir.join("prostate.nii.gz"))?;
    }
    case.sidecar.save(dir.join("sidecar.json"))
}

pub fn load_preprocessed(dir: impl AsRef<Path>) -> Result<PreprocessedCase> {
    let dir = dir.as_ref();
    let prostate_path = dir.join("prostate.nii.gz");
    Ok(PreprocessedCase {
        image: load_scalar_volume(dir.join("image.nii.gz"))?,
        mask: load_label_volume(dir.join("mask.nii.gz"))?,
        prostate: prostate_path.exists().then(|| load_label_volume(&prostate_path)).transpose()?,
        sidecar: Sidecar::load(dir.join("sidecar.json"))?,
    })
}
