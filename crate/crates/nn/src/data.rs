//! Two-dimensional training samples drawn from preprocessed volumes.

use candle_core::{Device, Tensor};
use dilseg_core::preprocess::{PreprocessedCase, make_binary_labels, make_smoothed_labels, stack_slices};
use ndarray::{Array2, Array3, Axis, s};
use rand::SeedableRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;

use crate::augment::augment_sample;
use crate::config::AugmentFlags;
use crate::error::{Error, Result};
use crate::networks::fpsnet::{self, BBox};
use crate::networks::NetworkSpec;

/// How samples are shaped for a given network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLayout {
    /// Neighbouring slices stacked on each side of the centre slice.
    pub context: usize,
    /// Resolution factor of the auxiliary full-size label (FPSnet only).
    pub label_scale: Option<usize>,
    /// Bilinear rather than nearest-neighbour label upsampling.
    pub smoothed: bool,
}

impl SampleLayout {
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        let arch = spec.architecture;
        Self {
            context: spec.in_channels.saturating_sub(1) / 2,
            label_scale: arch.is_fps().then_some(fpsnet::SCALE),
            smoothed: arch.smoothed_labels(),
        }
    }
}

/// One slice reference: (case index, slice index).
pub type SliceRef = (usize, usize);

#[derive(Clone, Debug)]
pub struct Sample {
    /// Stacked slices, (C, H, W).
    pub image: Array3<f32>,
    /// Binary label of the centre slice, (H, W).
    pub label: Array2<f32>,
    /// Upsampled label at the FPSnet working resolution.
    pub label_full: Option<Array2<f32>>,
}

pub struct SliceDataset<'a> {
    cases: Vec<&'a PreprocessedCase>,
    layout: SampleLayout,
    foreground: Vec<SliceRef>,
    background: Vec<SliceRef>,
}

/// Independent RNG for one sample, derived from (seed, epoch, index) only.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) ^ index as u64);
    rng
}

/// RNG used to compose an epoch's slice list.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5A3B_1E5C_0DE5);
    rng.set_stream(epoch as u64);
    rng
}

impl<'a> SliceDataset<'a> {
    pub fn new(cases: Vec<&'a PreprocessedCase>, layout: SampleLayout) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::EmptyData("no cases in dataset".into()));
        }
        let mut foreground = Vec::new();
        let mut background = Vec::new();
        for (ci, case) in cases.iter().enumerate() {
            if case.image.data().dim() != case.mask.data().dim() {
                return Err(Error::ShapeMismatch(format!("{}: image and mask grids differ", case.sidecar.case_id)));
            }
            for z in 0..case.mask.depth() {
                let fg = case.mask.data().index_axis(Axis(0), z).iter().any(|&v| v > 0);
                if fg { foreground.push((ci, z)) } else { background.push((ci, z)) }
            }
        }
        Ok(Self { cases, layout, foreground, background })
    }

    pub fn layout(&self) -> SampleLayout {
        self.layout
    }

    pub fn foreground_slices(&self) -> &[SliceRef] {
        &self.foreground
    }

    /// Every slice of every case, in order.
    pub fn all_slices(&self) -> Vec<SliceRef> {
        let mut all: Vec<SliceRef> = self.foreground.iter().chain(&self.background).copied().collect();
        all.sort_unstable();
        all
    }

    /// Slices for one epoch: every foreground slice plus a fresh draw of
    /// background slices (`ratio` per foreground slice, without replacement),
    /// shuffled.
    pub fn epoch_slices(&self, seed: u64, epoch: usize, ratio: f64) -> Vec<SliceRef> {
        let mut rng = epoch_rng(seed, epoch);
        let n_bg = ((self.foreground.len() as f64 * ratio).round() as usize).min(self.background.len());
        let mut list = self.foreground.clone();
        list.extend(self.background.choose_multiple(&mut rng, n_bg).copied());
        list.shuffle(&mut rng);
        list
    }

    /// Builds a sample, optionally augmented with `rng`.
    pub fn sample(&self, at: SliceRef, augment: Option<(&AugmentFlags, &mut ChaCha8Rng)>) -> Result<Sample> {
        let case = self.cases.get(at.0).ok_or_else(|| Error::EmptyData(format!("no case {}", at.0)))?;
        let image = stack_slices(&case.image, at.1, self.layout.context)?;
        let label = case.mask.data().slice(s![at.1, .., ..]).mapv(|v| if v > 0 { 1.0f32 } else { 0.0 });
        let (image, label) = match augment {
            Some((flags, rng)) if flags.any() => augment_sample(&image, &label, flags, rng),
            _ => (image, label),
        };
        let label_full = self.layout.label_scale.map(|f| {
            let (h, w) = label.dim();
            let size = [w * f, h * f];
            if self.layout.smoothed { make_smoothed_labels(&label, size) } else { make_binary_labels(&label, size) }
        });
        Ok(Sample { image, label, label_full })
    }

    pub fn case(&self, i: usize) -> &PreprocessedCase {
        self.cases[i]
    }

    pub fn num_cases(&self) -> usize {
        self.cases.len()
    }
}

/// A batch as tensors.
pub struct Batch {
    /// (N, C, H, W)
    pub images: Tensor,
    /// (N, 1, H, W)
    pub labels: Tensor,
    /// (N, 1, sH, sW) for FPSnet.
    pub labels_full: Option<Tensor>,
    /// Ground-truth boxes per sample at the full label resolution.
    pub boxes: Option<Vec<Vec<BBox>>>,
}

fn stack2(maps: &[&Array2<f32>]) -> Result<Tensor> {
    let (h, w) = maps[0].dim();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if m.dim() != (h, w) {
            return Err(Error::ShapeMismatch("labels of different sizes in one batch".into()));
        }
        data.extend(m.iter().copied());
    }
    Ok(Tensor::from_vec(data, (maps.len(), 1, h, w), &Device::Cpu)?)
}

pub fn collate(samples: &[Sample]) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::EmptyData("empty batch".into()));
    }
    let (c, h, w) = samples[0].image.dim();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for smp in samples {
        if smp.image.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch("images of different sizes in one batch".into()));
        }
        data.extend(smp.image.iter().copied());
    }
    let images = Tensor::from_vec(data, (samples.len(), c, h, w), &Device::Cpu)?;
    let labels = stack2(&samples.iter().map(|s| &s.label).collect::<Vec<_>>())?;
    let full: Option<Vec<&Array2<f32>>> = samples.iter().map(|s| s.label_full.as_ref()).collect();
    let (labels_full, boxes) = match full {
        Some(maps) => {
            let boxes = maps.iter().map(|m| fpsnet::label_boxes(&m.view())).collect();
            (Some(stack2(&maps)?), Some(boxes))
        }
        None => (None, None),
    };
    Ok(Batch { images, labels, labels_full, boxes })
}
