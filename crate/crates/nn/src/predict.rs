//! Slice-wise inference on preprocessed volumes.

use dilseg_core::preprocess::{PreprocessedCase, restore_probability, stack_slices};
use dilseg_core::volumes::{LabelVolume, ScalarVolume};
use ndarray::{Array3, s};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::networks::{Network, batch_tensor};

/// Probability map on the preprocessed grid, predicted slice by slice.
pub fn predict_preprocessed(net: &Network, case: &PreprocessedCase, batch_size: usize) -> Result<ScalarVolume> {
    let spec = net.spec();
    let k = spec.in_channels.saturating_sub(1) / 2;
    if 2 * k + 1 != spec.in_channels {
        return Err(Error::InvalidSpec(format!("{} input channels is not an odd slice stack", spec.in_channels)));
    }
    let (depth, ny, nx) = case.image.data().dim();
    let mut out = Array3::<f32>::zeros((depth, ny, nx));
    let slices: Vec<usize> = (0..depth).collect();
    for chunk in slices.chunks(batch_size.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * spec.in_channels * ny * nx);
        for &z in chunk {
            data.extend(stack_slices(&case.image, z, k)?.iter().copied());
        }
        let x = batch_tensor(data, chunk.len(), spec.in_channels, ny, nx)?;
        let probs = net.forward(&x, Mode::Eval)?.main.flatten_from(1)?.to_vec2::<f32>()?;
        for (&z, p) in chunk.iter().zip(probs) {
            let plane = ndarray::ArrayView2::from_shape((ny, nx), &p).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            out.slice_mut(s![z, .., ..]).assign(&plane);
        }
    }
    Ok(case.image.with_data(out)?)
}

/// Probability map restored to the original image grid.
pub fn predict_case(net: &Network, case: &PreprocessedCase, batch_size: usize) -> Result<ScalarVolume> {
    let pre = predict_preprocessed(net, case, batch_size)?;
    Ok(restore_probability(&pre, &case.sidecar)?)
}

/// Binary mask of a probability map at `threshold` (strictly greater).
pub fn binarize(prob: &ScalarVolume, threshold: f32) -> LabelVolume {
    prob.map(|&p| u16::from(p > threshold))
}
