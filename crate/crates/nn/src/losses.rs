//! Training losses.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::networks::fpsnet::{self, BBox, FOCAL_ALPHA, FOCAL_GAMMA};

/// Smoothing added to numerator and denominator of the soft Dice ratio.
pub const DICE_EPS: f64 = 1.0;
/// Transition point of the smooth-L1 box loss.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `1 - (2 Σ p·t + ε) / (Σ p + Σ t + ε)`, summed over the whole tensor.
pub fn soft_dice_loss(pred: &Tensor, target: &Tensor, eps: f64) -> Result<Tensor> {
    same_shape(pred, target)?;
    let inter = (pred * target)?.sum_all()?;
    let denom = ((pred.sum_all()? + target.sum_all()?)? + eps)?;
    let ratio = ((inter * 2.0)? + eps)?.div(&denom)?;
    Ok(ratio.affine(-1.0, 1.0)?)
}

/// `μ·L(main) + (1 − μ)·L(aux)`; with μ = 1 this is exactly `L(main)`.
pub fn combined_loss(main: &Tensor, aux: &Tensor, target: &Tensor, mu: f64, eps: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidConfig(format!("mu must lie in [0, 1], got {mu}")));
    }
    same_shape(aux, target)?;
    let l_main = soft_dice_loss(main, target, eps)?;
    if mu == 1.0 {
        return Ok(l_main);
    }
    let l_aux = soft_dice_loss(aux, target, eps)?;
    Ok(((l_main * mu)? + (l_aux * (1.0 - mu))?)?)
}

/// Mean of the soft Dice losses of several predictions of the same target.
pub fn mean_dice_loss(preds: &[Tensor], target: &Tensor, eps: f64) -> Result<Tensor> {
    if preds.is_empty() {
        return Err(Error::ShapeMismatch("no predictions to average".into()));
    }
    let losses = preds.iter().map(|p| soft_dice_loss(p, target, eps)).collect::<Result<Vec<_>>>()?;
    Ok((Tensor::stack(&losses, 0)?.sum_all()? / preds.len() as f64)?)
}

/// Per-anchor detection targets for a batch.
pub struct DetectionTargets {
    /// 1 for positives, 0 otherwise, (N, A).
    pub labels: Tensor,
    /// 0 for ignored anchors, (N, A).
    pub weights: Tensor,
    /// Encoded box targets, (N, A, 4); zero for non-positives.
    pub boxes: Tensor,
    /// 1 for positives, (N, A, 1).
    pub positive: Tensor,
    pub num_positive: usize,
}

impl DetectionTargets {
    pub fn build(anchors: &[BBox], gts: &[Vec<BBox>]) -> Result<Self> {
        let a = anchors.len();
        let n = gts.len();
        let mut labels = vec![0f32; n * a];
        let mut weights = vec![0f32; n * a];
        let mut boxes = vec![0f32; n * a * 4];
        let mut num_positive = 0;
        for (i, g) in gts.iter().enumerate() {
            let (assign, matched) = fpsnet::assign_anchors(anchors, g);
            for j in 0..a {
                let k = i * a + j;
                match assign[j] {
                    1 => {
                        labels[k] = 1.0;
                        weights[k] = 1.0;
                        boxes[k * 4..k * 4 + 4].copy_from_slice(&fpsnet::encode_box(&anchors[j], &g[matched[j]]));
                        num_positive += 1;
                    }
                    0 => weights[k] = 1.0,
                    _ => {}
                }
            }
        }
        let dev = Device::Cpu;
        let positive = Tensor::from_vec(labels.clone(), (n, a, 1), &dev)?;
        Ok(Self {
            labels: Tensor::from_vec(labels, (n, a), &dev)?,
            weights: Tensor::from_vec(weights, (n, a), &dev)?,
            boxes: Tensor::from_vec(boxes, (n, a, 4), &dev)?,
            positive,
            num_positive,
        })
    }
}

/// Sigmoid focal loss summed over non-ignored anchors and normalised by the
/// number of positives (at least one).
pub fn focal_loss(logits: &Tensor, t: &DetectionTargets) -> Result<Tensor> {
    same_shape(logits, &t.labels)?;
    let x = logits;
    let y = &t.labels;
    // numerically stable binary cross-entropy with logits
    let ce = ((x.relu()? - (x * y)?)? + x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?)?;
    let p = candle_nn::ops::sigmoid(x)?;
    let one_minus_y = y.affine(-1.0, 1.0)?;
    let p_t = ((&p * y)? + (p.affine(-1.0, 1.0)? * &one_minus_y)?)?;
    let alpha_t = ((y * FOCAL_ALPHA)? + (&one_minus_y * (1.0 - FOCAL_ALPHA))?)?;
    let modulator = p_t.affine(-1.0, 1.0)?.powf(FOCAL_GAMMA)?;
    let per_anchor = ((alpha_t * modulator)? * ce)?;
    let total = (per_anchor * &t.weights)?.sum_all()?;
    Ok((total / t.num_positive.max(1) as f64)?)
}

/// Smooth-L1 box regression over positive anchors, normalised like the focal loss.
pub fn box_loss(deltas: &Tensor, t: &DetectionTargets) -> Result<Tensor> {
    same_shape(deltas, &t.boxes)?;
    let a = (deltas - &t.boxes)?.abs()?;
    let m = a.minimum(SMOOTH_L1_BETA)?;
    let per = ((m.sqr()? * (0.5 / SMOOTH_L1_BETA))? + (a - m)?)?;
    let total = per.broadcast_mul(&t.positive)?.sum_all()?;
    Ok((total / t.num_positive.max(1) as f64)?)
}

/// Hard Dice between two binary maps; 1 when both are empty.
pub fn hard_dice(pred: &[bool], target: &[bool]) -> f64 {
    let (mut tp, mut np, mut nt) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(target) {
        tp += (p && t) as usize;
        np += p as usize;
        nt += t as usize;
    }
    if np + nt == 0 { 1.0 } else { 2.0 * tp as f64 / (np + nt) as f64 }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
