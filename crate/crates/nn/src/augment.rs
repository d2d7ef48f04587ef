//! Paired geometric augmentation of training slices.
//!
//! One transform is drawn per sample and applied to every image channel
//! (bilinear) and to the label (nearest neighbour). Rotations are about the
//! image centre. Samples whose transform is a pure flip and/or a multiple of
//! 90° take an exact index-permutation path, so the label's foreground count is
//! preserved exactly on square images.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::config::AugmentFlags;

pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const MAX_ROTATION_DEG: f64 = 10.0;
/// Displacement magnitude of the elastic field, in pixels before smoothing.
pub const ELASTIC_ALPHA: f64 = 34.0;
/// Gaussian smoothing of the elastic field, in pixels.
pub const ELASTIC_SIGMA: f64 = 4.0;
/// Probability with which each enabled transform is applied.
pub const APPLY_PROBABILITY: f64 = 0.5;

/// One drawn transform.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    /// Left-right flip.
    pub flip: bool,
    pub scale: f64,
    /// Counter-clockwise rotation in degrees.
    pub angle_deg: f64,
    /// Per-pixel (dy, dx) displacement, same size as the sample.
    pub elastic: Option<(Array2<f32>, Array2<f32>)>,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self { flip: false, scale: 1.0, angle_deg: 0.0, elastic: None }
    }

    pub fn draw<R: Rng + ?Sized>(flags: &AugmentFlags, rng: &mut R, h: usize, w: usize) -> Self {
        let mut p = Self::identity();
        if flags.flip && rng.random_bool(APPLY_PROBABILITY) {
            p.flip = true;
        }
        if flags.scale && rng.random_bool(APPLY_PROBABILITY) {
            p.scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        }
        if flags.rotate && rng.random_bool(APPLY_PROBABILITY) {
            p.angle_deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        }
        if flags.elastic && rng.random_bool(APPLY_PROBABILITY) {
            p.elastic = Some((elastic_field(rng, h, w), elastic_field(rng, h, w)));
        }
        p
    }

    /// Number of quarter turns when the transform is an exact lattice map.
    fn quarter_turns(&self) -> Option<usize> {
        if self.scale != 1.0 || self.elastic.is_some() {
            return None;
        }
        let q = self.angle_deg / 90.0;
        (q == q.round()).then(|| q.round().rem_euclid(4.0) as usize)
    }
}

/// Uniform noise in [-1, 1], Gaussian-smoothed and scaled by `ELASTIC_ALPHA`.
fn elastic_field<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Array2<f32> {
    let u = Uniform::new_inclusive(-1.0f64, 1.0).expect("valid range");
    let noise = Array2::from_shape_fn((h, w), |_| u.sample(rng));
    gaussian_blur(&noise, ELASTIC_SIGMA).mapv(|v| (v * ELASTIC_ALPHA) as f32)
}

/// Separable Gaussian blur with reflected borders.
fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as usize
    };
    let (h, w) = img.dim();
    let pass = |src: &Array2<f64>, along_x: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| {
                    let off = j as isize - radius;
                    if along_x {
                        k * src[[y, reflect(x as isize + off, w)]]
                    } else {
                        k * src[[reflect(y as isize + off, h), x]]
                    }
                })
                .sum()
        })
    };
    pass(&pass(img, true), false)
}

/// Draws and applies a transform; returns the augmented (image, label).
pub fn augment_sample<R: Rng + ?Sized>(
    image: &Array3<f32>,
    label: &Array2<f32>,
    flags: &AugmentFlags,
    rng: &mut R,
) -> (Array3<f32>, Array2<f32>) {
    let (_, h, w) = image.dim();
    let params = AugmentParams::draw(flags, rng, h, w);
    apply(image, label, &params)
}

/// Applies `params` to an image of shape (C, H, W) and its (H, W) label.
pub fn apply(image: &Array3<f32>, label: &Array2<f32>, params: &AugmentParams) -> (Array3<f32>, Array2<f32>) {
    assert_eq!((image.dim().1, image.dim().2), label.dim(), "image and label grids differ");
    if let Some(turns) = params.quarter_turns() {
        let (h, w) = label.dim();
        if turns % 2 == 0 || h == w {
            let img = Array3::from_shape_fn(image.dim(), |(c, y, x)| {
                let (sy, sx) = lattice_source(y, x, h, w, params.flip, turns);
                image[[c, sy, sx]]
            });
            let lab = Array2::from_shape_fn((h, w), |(y, x)| {
                let (sy, sx) = lattice_source(y, x, h, w, params.flip, turns);
                label[[sy, sx]]
            });
            return (img, lab);
        }
    }
    warp(image, label, params)
}

/// Source pixel of output (y, x) under a flip followed by `turns`
/// counter-clockwise quarter turns.
fn lattice_source(y: usize, x: usize, h: usize, w: usize, flip: bool, turns: usize) -> (usize, usize) {
    // undo the rotation
    let (ry, rx) = match turns {
        0 => (y, x),
        1 => (x, w - 1 - y),
        2 => (h - 1 - y, w - 1 - x),
        _ => (h - 1 - x, y),
    };
    if flip { (ry, w - 1 - rx) } else { (ry, rx) }
}

fn warp(image: &Array3<f32>, label: &Array2<f32>, params: &AugmentParams) -> (Array3<f32>, Array2<f32>) {
    let (channels, h, w) = image.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = params.angle_deg.to_radians().sin_cos();
    let inv_scale = 1.0 / params.scale;
    // Inverse map from output to source coordinates.
    let source = |y: usize, x: usize| -> (f64, f64) {
        let (mut oy, mut ox) = (y as f64, x as f64);
        if let Some((dy, dx)) = &params.elastic {
            oy += dy[[y, x]] as f64;
            ox += dx[[y, x]] as f64;
        }
        let (py, px) = (oy - cy, ox - cx);
        // inverse of a counter-clockwise rotation in image coordinates (y down)
        let ry = (cos * py + sin * px) * inv_scale;
        let rx = (-sin * py + cos * px) * inv_scale;
        let sx = if params.flip { -rx } else { rx };
        (ry + cy, sx + cx)
    };
    let coords: Vec<(f64, f64)> = (0..h * w).map(|i| source(i / w, i % w)).collect();
    let mut out = Array3::<f32>::zeros((channels, h, w));
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let src = image.index_axis(Axis(0), c);
        for (i, v) in plane.iter_mut().enumerate() {
            let (sy, sx) = coords[i];
            *v = bilinear_zero(&src, sy, sx);
        }
    }
    let lab = Array2::from_shape_fn((h, w), |(y, x)| {
        let (sy, sx) = coords[y * w + x];
        let (ry, rx) = (sy.round(), sx.round());
        if ry < 0.0 || rx < 0.0 || ry > (h - 1) as f64 || rx > (w - 1) as f64 {
            0.0
        } else {
            label[[ry as usize, rx as usize]]
        }
    });
    (out, lab)
}

/// Bilinear sample with zeros outside the grid.
fn bilinear_zero(img: &ndarray::ArrayView2<f32>, y: f64, x: f64) -> f32 {
    let (h, w) = img.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let at = |yy: f64, xx: f64| -> f32 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 { 0.0 } else { img[[yy as usize, xx as usize]] }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bot = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bot * fy
}
