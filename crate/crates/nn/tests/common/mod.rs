#![allow(dead_code)]

use dilseg_core::phantom::{PhantomConfig, case_rng, generate_case};
use dilseg_core::preprocess::{Normalization, PreprocessConfig, PreprocessedCase, preprocess_volumes};
use dilseg_nn::config::{AugmentFlags, TrainConfig};

/// Small phantom cases preprocessed to `size`×`size` in-plane.
pub fn phantom_cases(n: usize, size: usize, seed: u64) -> Vec<PreprocessedCase> {
    let g = size as f64 / 4.0;
    let pc = PhantomConfig {
        dims: [size, size, 8],
        gland_semi_axes_mm: [g, g * 0.85, 9.0],
        gland_jitter_mm: 1.0,
        lesion_count: [1, 1],
        lesion_median_cc: 0.15,
        lesion_volume_range_cc: [0.1, 0.25],
        lesion_radius_range_mm: [1.5, 6.0],
        ..Default::default()
    };
    let pre = PreprocessConfig { normalization: Normalization::ZScore, crop_size: [size, size], ..Default::default() };
    (0..n)
        .map(|i| {
            let c = generate_case(&pc, &mut case_rng(seed, i as u64)).unwrap();
            preprocess_volumes(&format!("case{i}"), &c.image, &c.mask, Some(&c.prostate), &pre).unwrap()
        })
        .collect()
}

pub fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig { lr: 1e-3, max_epochs: Some(epochs), augment: AugmentFlags::none(), seed: 5, ..Default::default() }
}
