//! Volumetric images and label maps.
//!
//! Voxel data is held as `Array3` indexed `[z, y, x]`, so axial slices are
//! contiguous along the first axis. Geometry is kept in NIfTI precision
//! (`f32`) so that a save/load cycle reproduces spacing and origin exactly.
//!
//! Two on-disk formats are supported:
//!
//! * NIfTI-1 (`.nii`, `.nii.gz`), reoriented to the canonical RAS+ axis order
//!   on load.
//! * A raw little-endian array with a JSON header (`*.json` pointing at a
//!   sibling `.raw` file), used by tests and phantoms that want no external
//!   format code in the loop.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayView3, Axis};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, NiftiType, ReaderOptions, XForm};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

/// Physical placement of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Voxel size along x, y, z in mm.
    pub spacing: [f32; 3],
    /// World position (mm) of the centre of voxel (0, 0, 0).
    pub origin: [f32; 3],
    /// Unit direction of each voxel axis; `direction[row][col]` is world
    /// component `row` of voxel axis `col`.
    pub direction: [[f32; 3]; 3],
}

impl Geometry {
    pub const IDENTITY_DIRECTION: [[f32; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    pub fn with_spacing(spacing: [f32; 3]) -> Self {
        Self {
            spacing,
            origin: [0.0; 3],
            direction: Self::IDENTITY_DIRECTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().chain(self.direction.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite origin or direction".into()));
        }
        Ok(())
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().map(|&s| s as f64).product()
    }

    /// World coordinate (mm) of a fractional voxel index given as (x, y, z).
    pub fn index_to_world(&self, index: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (row, o) in out.iter_mut().enumerate() {
            *o = self.origin[row] as f64
                + (0..3)
                    .map(|col| self.direction[row][col] as f64 * self.spacing[col] as f64 * index[col])
                    .sum::<f64>();
        }
        out
    }
}

/// A voxel grid with geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    data: Array3<T>,
    geometry: Geometry,
}

/// ADC intensities (10⁻⁶ mm²/s).
pub type ScalarVolume = Volume<f32>;
/// Integer lesion ids, 0 = background.
pub type LabelVolume = Volume<u16>;
/// Per-voxel probabilities or smoothed labels in [0, 1].
pub type ProbabilityVolume = Volume<f32>;

impl<T> Volume<T> {
    pub fn new(data: Array3<T>, geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidGeometry("volume has zero extent".into()));
        }
        Ok(Self { data, geometry })
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<T> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.geometry.spacing
    }

    /// Grid size as (nx, ny, nz).
    pub fn dims_xyz(&self) -> [usize; 3] {
        let (nz, ny, nx) = self.data.dim();
        [nx, ny, nz]
    }

    pub fn depth(&self) -> usize {
        self.data.dim().0
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> bool {
        self.data.dim() == other.data.dim() && self.geometry == other.geometry
    }

    pub fn with_data<U>(&self, data: Array3<U>) -> Result<Volume<U>> {
        if data.dim() != self.data.dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {:?}, got {:?}",
                self.data.dim(),
                data.dim()
            )));
        }
        Ok(Volume {
            data,
            geometry: self.geometry,
        })
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Volume<U> {
        Volume {
            data: self.data.map(f),
            geometry: self.geometry,
        }
    }
}

impl LabelVolume {
    /// Sorted distinct nonzero label ids.
    pub fn label_ids(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &v in self.data.iter() {
            seen[v as usize] = true;
        }
        (1..=u16::MAX).filter(|&v| seen[v as usize]).collect()
    }

    pub fn binary(&self) -> Volume<bool> {
        self.map(|&v| v != 0)
    }
}

impl ProbabilityVolume {
    pub fn check_probability_range(&self) -> Result<()> {
        match self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(v) => Err(Error::InvalidArgument(format!("probability value {v} outside [0, 1]"))),
            None => Ok(()),
        }
    }
}

/// Physical volume of one lesion in cm³.
pub fn lesion_volume_cc(mask: &LabelVolume, lesion_id: u16) -> Result<f64> {
    if lesion_id == 0 {
        return Err(Error::AbsentLesion(lesion_id));
    }
    let count = mask.data.iter().filter(|&&v| v == lesion_id).count();
    if count == 0 {
        return Err(Error::AbsentLesion(lesion_id));
    }
    Ok(count as f64 * mask.geometry.voxel_volume_mm3() / 1000.0)
}

/// Element types that can be stored on disk.
pub trait Voxel: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const RAW_DTYPE: &'static str;
    fn write_nifti(view: ArrayView3<'_, Self>, header: &NiftiHeader, path: &Path) -> nifti::Result<()>;
    fn write_raw(values: &[Self], out: &mut impl Write) -> std::io::Result<()>;
}

impl Voxel for f32 {
    const RAW_DTYPE: &'static str = "f32";
    fn write_nifti(view: ArrayView3<'_, Self>, header: &NiftiHeader, path: &Path) -> nifti::Result<()> {
        nifti::writer::WriterOptions::new(path)
            .reference_header(header)
            .write_nifti_with_type(&view, NiftiType::Float32)
    }
    fn write_raw(values: &[Self], out: &mut impl Write) -> std::io::Result<()> {
        values.iter().try_for_each(|v| out.write_all(&v.to_le_bytes()))
    }
}

impl Voxel for u16 {
    const RAW_DTYPE: &'static str = "u16";
    fn write_nifti(view: ArrayView3<'_, Self>, header: &NiftiHeader, path: &Path) -> nifti::Result<()> {
        nifti::writer::WriterOptions::new(path)
            .reference_header(header)
            .write_nifti_with_type(&view, NiftiType::Uint16)
    }
    fn write_raw(values: &[Self], out: &mut impl Write) -> std::io::Result<()> {
        values.iter().try_for_each(|v| out.write_all(&v.to_le_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Nifti,
    Raw,
}

fn detect_format(path: &Path) -> Result<Format> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        Ok(Format::Nifti)
    } else if name.ends_with(".json") {
        Ok(Format::Raw)
    } else {
        Err(Error::UnsupportedFormat(path.to_path_buf()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    /// (nx, ny, nz)
    shape: [usize; 3],
    dtype: String,
    geometry: Geometry,
    data_file: String,
}

/// Loads an ADC image. Non-finite voxels are replaced by zero with a warning.
pub fn load_scalar_volume(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let (data, geometry) = read_f64(path)?;
    let bad = data.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        log::warn!("{}: {bad} non-finite voxels replaced by 0", path.display());
    }
    let data = data.mapv(|v| if v.is_finite() { v as f32 } else { 0.0 });
    Volume::new(data, geometry)
}

/// Loads a probability map; values must be finite.
pub fn load_probability_volume(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    let path = path.as_ref();
    let (data, geometry) = read_f64(path)?;
    let bad = data.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFiniteLabels { path: path.into(), count: bad });
    }
    let vol = Volume::new(data.mapv(|v| v as f32), geometry)?;
    vol.check_probability_range()?;
    Ok(vol)
}

/// Loads an integer label map. Non-integer, negative or non-finite values
/// reject the load.
pub fn load_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let (data, geometry) = read_f64(path)?;
    let bad = data.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFiniteLabels { path: path.into(), count: bad });
    }
    if let Some(&value) = data.iter().find(|v| v.fract() != 0.0) {
        return Err(Error::NonIntegerLabel { path: path.into(), value });
    }
    if let Some(&value) = data.iter().find(|&&v| v < 0.0 || v > u16::MAX as f64) {
        return Err(Error::LabelOutOfRange { path: path.into(), value });
    }
    Volume::new(data.mapv(|v| v as u16), geometry)
}

pub fn save_volume<T: Voxel>(volume: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    volume.geometry.validate()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    match detect_format(path)? {
        Format::Nifti => write_nifti(volume, path),
        Format::Raw => write_raw(volume, path),
    }
}

fn read_f64(path: &Path) -> Result<(Array3<f64>, Geometry)> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    match detect_format(path)? {
        Format::Nifti => read_nifti(path),
        Format::Raw => read_raw(path),
    }
}

fn read_nifti(path: &Path) -> Result<(Array3<f64>, Geometry)> {
    let nifti_err = |e: nifti::NiftiError| Error::Nifti {
        path: path.into(),
        message: e.to_string(),
    };
    let obj = ReaderOptions::new().read_file(path).map_err(nifti_err)?;
    let header = obj.header().clone();
    let arr = obj.into_volume().into_ndarray::<f64>().map_err(nifti_err)?;
    let malformed = |message: String| Error::MalformedHeader {
        path: path.into(),
        message,
    };
    let shape = arr.shape().to_vec();
    if shape.len() < 3 || shape[3..].iter().any(|&d| d != 1) {
        return Err(malformed(format!("expected a 3-D volume, got shape {shape:?}")));
    }
    let arr = arr
        .into_shape_with_order((ndarray::IxDyn(&shape[..3]), ndarray::Order::ColumnMajor))
        .and_then(|a| a.into_dimensionality::<ndarray::Ix3>())
        .map_err(|e| malformed(e.to_string()))?;

    let spacing = [header.pixdim[1].abs(), header.pixdim[2].abs(), header.pixdim[3].abs()];
    let affine = header_affine(&header, spacing);
    let mut direction = [[0f32; 3]; 3];
    for col in 0..3 {
        let norm = (0..3).map(|r| affine[r][col].powi(2)).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(malformed("degenerate affine".into()));
        }
        for row in 0..3 {
            direction[row][col] = (affine[row][col] / norm) as f32;
        }
    }
    let origin = [affine[0][3] as f32, affine[1][3] as f32, affine[2][3] as f32];
    let geometry = Geometry {
        spacing,
        origin,
        direction,
    };
    geometry.validate().map_err(|e| malformed(e.to_string()))?;
    // nifti arrays are indexed [x, y, z]
    let zyx = arr.permuted_axes([2, 1, 0]);
    Ok(reorient_canonical(zyx.as_standard_layout().into_owned(), geometry))
}

fn header_affine(header: &NiftiHeader, spacing: [f32; 3]) -> [[f64; 4]; 3] {
    if header.sform_code != 0 {
        let rows = [header.srow_x, header.srow_y, header.srow_z];
        return rows.map(|r| r.map(|v| v as f64));
    }
    if header.qform_code != 0 {
        let (b, c, d) = (header.quatern_b as f64, header.quatern_c as f64, header.quatern_d as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if header.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [spacing[0] as f64, spacing[1] as f64, spacing[2] as f64 * qfac];
        let offset = [header.quatern_x as f64, header.quatern_y as f64, header.quatern_z as f64];
        let mut out = [[0.0; 4]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = rot[r][c] * scale[c];
            }
            out[r][3] = offset[r];
        }
        return out;
    }
    [
        [spacing[0] as f64, 0.0, 0.0, 0.0],
        [0.0, spacing[1] as f64, 0.0, 0.0],
        [0.0, 0.0, spacing[2] as f64, 0.0],
    ]
}

/// Permutes and flips voxel axes so that voxel axis i points along +world
/// axis i. The residual rotation of oblique acquisitions stays in
/// `direction`.
fn reorient_canonical<T: Clone>(data: Array3<T>, geometry: Geometry) -> (Array3<T>, Geometry) {
    // perm[world axis] = voxel axis (x=0, y=1, z=2) mostly aligned with it
    let mut perm = [usize::MAX; 3];
    let mut used = [false; 3];
    let mut order: Vec<(usize, usize, f32)> = Vec::new();
    for col in 0..3 {
        for row in 0..3 {
            order.push((row, col, geometry.direction[row][col].abs()));
        }
    }
    order.sort_by(|a, b| b.2.total_cmp(&a.2));
    for (row, col, _) in order {
        if perm[row] == usize::MAX && !used[col] {
            perm[row] = col;
            used[col] = true;
        }
    }
    if perm == [0, 1, 2] && (0..3).all(|i| geometry.direction[i][i] > 0.0) {
        return (data, geometry);
    }
    let dims = {
        let (nz, ny, nx) = data.dim();
        [nx, ny, nz]
    };
    let mut xyz = data.permuted_axes([2, 1, 0]).permuted_axes([perm[0], perm[1], perm[2]]);
    let mut start_index = [0f64; 3];
    let mut direction = [[0f32; 3]; 3];
    let mut spacing = [0f32; 3];
    for world in 0..3 {
        let old = perm[world];
        let sign = if geometry.direction[world][old] < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            xyz.invert_axis(Axis(world));
            start_index[old] = (dims[old] - 1) as f64;
        }
        spacing[world] = geometry.spacing[old];
        for row in 0..3 {
            direction[row][world] = geometry.direction[row][old] * sign;
        }
    }
    let origin = geometry.index_to_world(start_index).map(|v| v as f32);
    let zyx = xyz.permuted_axes([2, 1, 0]).as_standard_layout().into_owned();
    (
        zyx,
        Geometry {
            spacing,
            origin,
            direction,
        },
    )
}

fn write_nifti<T: Voxel>(volume: &Volume<T>, path: &Path) -> Result<()> {
    let g = &volume.geometry;
    let mut header = NiftiHeader {
        pixdim: [1.0, g.spacing[0], g.spacing[1], g.spacing[2], 1.0, 1.0, 1.0, 1.0],
        sform_code: XForm::ScannerAnat as i16,
        qform_code: 0,
        xyzt_units: 2, // mm
        ..NiftiHeader::default()
    };
    let mut rows = [[0f32; 4]; 3];
    for (r, row) in rows.iter_mut().enumerate() {
        for c in 0..3 {
            row[c] = g.direction[r][c] * g.spacing[c];
        }
        row[3] = g.origin[r];
    }
    header.srow_x = rows[0];
    header.srow_y = rows[1];
    header.srow_z = rows[2];
    // writer expects [x, y, z] indexing
    let view = volume.data.view().permuted_axes([2, 1, 0]);
    T::write_nifti(view, &header, path).map_err(|e| Error::Nifti {
        path: path.into(),
        message: e.to_string(),
    })
}

fn raw_data_path(header_path: &Path, data_file: &str) -> PathBuf {
    header_path.parent().unwrap_or(Path::new("")).join(data_file)
}

fn write_raw<T: Voxel>(volume: &Volume<T>, path: &Path) -> Result<()> {
    let stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".json"))
        .unwrap_or("volume");
    let data_file = format!("{stem}.raw");
    let header = RawHeader {
        shape: volume.dims_xyz(),
        dtype: T::RAW_DTYPE.to_string(),
        geometry: volume.geometry,
        data_file: data_file.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).map_err(json_err(path))?;
    std::fs::write(path, json).map_err(io_err(path))?;
    let data_path = raw_data_path(path, &data_file);
    let file = File::create(&data_path).map_err(io_err(&data_path))?;
    let mut out = BufWriter::new(file);
    let values: Vec<T> = volume.data.iter().copied().collect();
    T::write_raw(&values, &mut out).map_err(io_err(&data_path))?;
    out.flush().map_err(io_err(&data_path))
}

fn read_raw(path: &Path) -> Result<(Array3<f64>, Geometry)> {
    let text = std::fs::read(path).map_err(io_err(path))?;
    let header: RawHeader = serde_json::from_slice(&text).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        message: e.to_string(),
    })?;
    let [nx, ny, nz] = header.shape;
    let n = nx * ny * nz;
    let data_path = raw_data_path(path, &header.data_file);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&data_path).map_err(io_err(&data_path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(&data_path))?;
    let values: Vec<f64> = match header.dtype.as_str() {
        "f32" if bytes.len() == n * 4 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        "u16" if bytes.len() == n * 2 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        other => {
            return Err(Error::MalformedHeader {
                path: path.into(),
                message: format!("dtype {other} with {} bytes for {n} voxels", bytes.len()),
            })
        }
    };
    let data = Array3::from_shape_vec((nz, ny, nx), values).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        message: e.to_string(),
    })?;
    header.geometry.validate()?;
    Ok((data, header.geometry))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(spacing: [f32; 3]) -> Geometry {
        Geometry {
            spacing,
            origin: [-40.0, -40.0, -30.5],
            direction: Geometry::IDENTITY_DIRECTION,
        }
    }

    #[test]
    fn nifti_header_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array3::from_shape_fn((20, 128, 128), |(z, y, x)| (z * 7 + y * 3 + x) as f32 * 0.5);
        let vol = Volume::new(data, geometry([0.625, 0.625, 3.0])).unwrap();
        for name in ["a.nii", "a.nii.gz", "a.json"] {
            let path = dir.path().join(name);
            save_volume(&vol, &path).unwrap();
            let back = load_scalar_volume(&path).unwrap();
            assert_eq!(back.dims_xyz(), [128, 128, 20]);
            assert_eq!(back.spacing(), [0.625, 0.625, 3.0]);
            assert_eq!(back, vol, "{name}");
        }
    }

    #[test]
    fn spacing_preserved_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::new(Array3::<f32>::zeros((4, 5, 6)), geometry([0.78, 0.78, 3.6])).unwrap();
        let path = dir.path().join("s.nii");
        save_volume(&vol, &path).unwrap();
        let back = load_scalar_volume(&path).unwrap();
        assert_eq!(back.spacing(), [0.78, 0.78, 3.6]);
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_ids_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array3::from_shape_fn((3, 4, 5), |(z, y, _)| ((z + y) % 3) as u16);
        let vol = Volume::new(data, geometry([1.0, 1.0, 1.0])).unwrap();
        let path = dir.path().join("m.nii.gz");
        save_volume(&vol, &path).unwrap();
        let back = load_label_volume(&path).unwrap();
        assert_eq!(back.label_ids(), vec![1, 2]);
        assert_eq!(back, vol);
    }

    #[test]
    fn non_integer_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = Array3::<f32>::zeros((2, 2, 2));
        data[[1, 1, 1]] = 2.5;
        let vol = Volume::new(data, geometry([1.0, 1.0, 1.0])).unwrap();
        let path = dir.path().join("bad.nii");
        save_volume(&vol, &path).unwrap();
        let err = load_label_volume(&path).unwrap_err();
        assert!(err.to_string().contains("non-integer label"), "{err}");
    }

    #[test]
    fn non_finite_handling() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = Array3::<f32>::ones((2, 2, 2));
        data[[0, 0, 0]] = f32::NAN;
        data[[0, 1, 0]] = f32::INFINITY;
        let vol = Volume::new(data, geometry([1.0, 1.0, 1.0])).unwrap();
        let path = dir.path().join("nan.json");
        save_volume(&vol, &path).unwrap();
        let img = load_scalar_volume(&path).unwrap();
        assert_eq!(img.data()[[0, 0, 0]], 0.0);
        assert!(matches!(
            load_label_volume(&path),
            Err(Error::NonFiniteLabels { count: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(load_scalar_volume("/nonexistent/x.nii"), Err(Error::Io { .. })));
        assert!(matches!(load_scalar_volume("/tmp/x.png"), Err(Error::Io { .. }) | Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn flipped_axes_are_reoriented() {
        let g = Geometry {
            spacing: [1.0, 2.0, 3.0],
            origin: [10.0, 20.0, 30.0],
            direction: [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        let data = Array3::from_shape_fn((2, 3, 4), |(z, y, x)| (100 * z + 10 * y + x) as f32);
        let (out, g2) = reorient_canonical(data.clone(), g);
        assert_eq!(g2.direction, Geometry::IDENTITY_DIRECTION);
        // world x of out[., ., 0] equals world x of data[., ., 3]
        assert_eq!(g2.origin, [7.0, 20.0, 30.0]);
        assert_eq!(out[[1, 2, 0]], data[[1, 2, 3]]);
    }

    #[test]
    fn swapped_axes_are_reoriented() {
        // voxel axis 0 runs along world y, voxel axis 1 along world x
        let g = Geometry {
            spacing: [2.0, 1.0, 3.0],
            origin: [0.0; 3],
            direction: [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        };
        let data = Array3::from_shape_fn((2, 3, 4), |(z, y, x)| (100 * z + 10 * y + x) as f32);
        let (out, g2) = reorient_canonical(data.clone(), g);
        assert_eq!(out.dim(), (2, 4, 3));
        assert_eq!(g2.spacing, [1.0, 2.0, 3.0]);
        assert_eq!(out[[1, 3, 2]], data[[1, 2, 3]]);
    }

    #[test]
    fn lesion_volume_arithmetic() {
        let mut data = Array3::<u16>::zeros((10, 30, 30));
        data.iter_mut().take(853).for_each(|v| *v = 1);
        let vol = Volume::new(data, Geometry::with_spacing([0.625, 0.625, 3.0])).unwrap();
        let cc = lesion_volume_cc(&vol, 1).unwrap();
        assert!((cc - 0.999_609_375).abs() < 1e-12);
        assert!(matches!(lesion_volume_cc(&vol, 2), Err(Error::AbsentLesion(2))));

        let mut one = Array3::<u16>::zeros((1, 1, 2));
        one[[0, 0, 0]] = 4;
        let vol = Volume::new(one, Geometry::with_spacing([10.0, 10.0, 10.0])).unwrap();
        assert_eq!(lesion_volume_cc(&vol, 4).unwrap(), 1.0);
    }

    #[test]
    fn zero_spacing_rejected() {
        assert!(Volume::new(Array3::<f32>::zeros((1, 1, 1)), Geometry::with_spacing([1.0, 0.0, 1.0])).is_err());
    }
}
