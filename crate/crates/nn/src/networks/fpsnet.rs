//! Panoptic-style detector/segmenter: a ResNet-50 backbone shared by a
//! RetinaNet detection branch (FPN levels P3–P7) and a Unet-shaped
//! segmentation decoder over the backbone stages C1–C5.
//!
//! The network works at twice the input resolution. Inputs are bilinearly
//! upsampled before the backbone and the segmentation map is average-pooled
//! back down, so the forward contract matches the other architectures.

use candle_core::{Device, Tensor};

use crate::error::Result;
use crate::kernels;
use crate::layers::{BatchNorm2d, Conv2d, DoubleConv, Head, Mode, concat, sigmoid};
use crate::params::Scope;

/// Working resolution relative to the input.
pub const SCALE: usize = 2;
pub const ANCHOR_SCALES: [f32; 3] = [1.0, 1.259_921, 1.587_401];
pub const ANCHOR_RATIOS: [f32; 3] = [0.5, 1.0, 2.0];
pub const ANCHORS_PER_CELL: usize = 9;
/// Anchor side at P3 in working-resolution pixels; doubles per level.
pub const BASE_ANCHOR_SIZE: f32 = 16.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const PRIOR_PROBABILITY: f64 = 0.01;
pub const POSITIVE_IOU: f32 = 0.5;
pub const NEGATIVE_IOU: f32 = 0.4;
pub const NMS_IOU: f32 = 0.5;
/// Boxes at or above this score gate the segmentation at inference.
pub const BOX_SCORE_THRESHOLD: f32 = 0.5;
const CANDIDATE_SCORE: f32 = 0.05;
const MAX_DETECTIONS: usize = 100;
const HEAD_STD: f64 = 0.01;

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(s: &mut Scope, inplanes: usize, planes: usize, stride: usize) -> Result<Self> {
        let out = planes * 4;
        let downsample = if stride != 1 || inplanes != out {
            Some((
                Conv2d::new(&mut s.pp("downsample.0"), inplanes, out, 1, stride, 0, false)?,
                BatchNorm2d::new(&mut s.pp("downsample.1"), out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&mut s.pp("conv1"), inplanes, planes, 1, 1, 0, false)?,
            bn1: BatchNorm2d::new(&mut s.pp("bn1"), planes)?,
            conv2: Conv2d::new(&mut s.pp("conv2"), planes, planes, 3, stride, 1, false)?,
            bn2: BatchNorm2d::new(&mut s.pp("bn2"), planes)?,
            conv3: Conv2d::new(&mut s.pp("conv3"), planes, out, 1, 1, 0, false)?,
            bn3: BatchNorm2d::new(&mut s.pp("bn3"), out)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x, mode)?, mode)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h, mode)?, mode)?.relu()?;
        let h = self.bn3.forward(&self.conv3.forward(&h, mode)?, mode)?;
        let skip = match &self.downsample {
            Some((c, bn)) => bn.forward(&c.forward(x, mode)?, mode)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// ResNet-50 with parameter names matching the torchvision layout, so a
/// pretrained state dict converted to safetensors loads directly.
pub struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    layers: Vec<Vec<Bottleneck>>,
}

pub const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];

impl ResNet50 {
    pub fn new(s: &mut Scope, in_ch: usize, width: usize) -> Result<Self> {
        let conv1 = Conv2d::new(&mut s.pp("conv1"), in_ch, width, 7, 2, 3, false)?;
        let bn1 = BatchNorm2d::new(&mut s.pp("bn1"), width)?;
        let mut inplanes = width;
        let mut layers = Vec::with_capacity(4);
        for (i, &blocks) in RESNET50_BLOCKS.iter().enumerate() {
            let planes = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let mut layer = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let mut bs = s.pp(format!("layer{}.{b}", i + 1));
                layer.push(Bottleneck::new(&mut bs, inplanes, planes, if b == 0 { stride } else { 1 })?);
                inplanes = planes * 4;
            }
            layers.push(layer);
        }
        Ok(Self { conv1, bn1, layers })
    }

    /// Stage outputs C1 (stride 2) through C5 (stride 32).
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let c1 = self.bn1.forward(&self.conv1.forward(x, mode)?, mode)?.relu()?;
        let mut h = kernels::max_pool2d(&c1, 3, 2, 1)?;
        let mut out = vec![c1];
        for layer in &self.layers {
            for block in layer {
                h = block.forward(&h, mode)?;
            }
            out.push(h.clone());
        }
        Ok(out)
    }
}

struct Fpn {
    lateral: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
    p6: Conv2d,
    p7: Conv2d,
}

impl Fpn {
    fn new(s: &mut Scope, in_channels: [usize; 3], ch: usize) -> Result<Self> {
        let mut lateral = Vec::new();
        let mut smooth = Vec::new();
        for (i, &c) in in_channels.iter().enumerate() {
            lateral.push(Conv2d::new(&mut s.pp(format!("lateral{}", i + 3)), c, ch, 1, 1, 0, true)?);
            smooth.push(Conv2d::new(&mut s.pp(format!("smooth{}", i + 3)), ch, ch, 3, 1, 1, true)?);
        }
        Ok(Self {
            lateral,
            smooth,
            p6: Conv2d::new(&mut s.pp("p6"), in_channels[2], ch, 3, 2, 1, true)?,
            p7: Conv2d::new(&mut s.pp("p7"), ch, ch, 3, 2, 1, true)?,
        })
    }

    /// P3..P7 from C3..C5.
    fn forward(&self, c: &[Tensor], mode: Mode) -> Result<Vec<Tensor>> {
        let mut inner = self.lateral[2].forward(&c[2], mode)?;
        let mut outs = vec![self.smooth[2].forward(&inner, mode)?];
        for i in (0..2).rev() {
            inner = (self.lateral[i].forward(&c[i], mode)? + kernels::upsample(&inner, 2)?)?;
            outs.insert(0, self.smooth[i].forward(&inner, mode)?);
        }
        let p6 = self.p6.forward(&c[2], mode)?;
        let p7 = self.p7.forward(&p6.relu()?, mode)?;
        outs.push(p6);
        outs.push(p7);
        Ok(outs)
    }
}

struct Subnet {
    convs: Vec<Conv2d>,
    out: Conv2d,
}

impl Subnet {
    fn new(s: &mut Scope, ch: usize, out_ch: usize, out_bias: f32) -> Result<Self> {
        let convs = (0..4)
            .map(|i| Conv2d::with_init(&mut s.pp(format!("conv{i}")), ch, ch, 3, 1, 1, true, HEAD_STD, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv2d::with_init(&mut s.pp("out"), ch, out_ch, 3, 1, 1, true, HEAD_STD, out_bias)?;
        Ok(Self { convs, out })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&h, mode)?.relu()?;
        }
        self.out.forward(&h, mode)
    }
}

struct SegDecoder {
    blocks: Vec<DoubleConv>,
    head: Head,
}

impl SegDecoder {
    /// `stage_ch` are the channel counts of C1..C5; `widths` the decoder
    /// widths from the deepest block up to the full working resolution.
    fn new(s: &mut Scope, stage_ch: [usize; 5], widths: [usize; 5]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut below = stage_ch[4];
        for (i, &w) in widths.iter().enumerate() {
            // blocks 0..3 merge with C4..C1; the last one runs at full resolution
            let skip = if i < 4 { stage_ch[3 - i] } else { 0 };
            blocks.push(DoubleConv::new(&mut s.pp(format!("block{i}")), below + skip, w)?);
            below = w;
        }
        let head = Head::new(&mut s.pp("head"), widths[4])?;
        Ok(Self { blocks, head })
    }

    fn logits(&self, c: &[Tensor], mode: Mode) -> Result<Tensor> {
        let mut h = c[4].clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let up = kernels::upsample(&h, 2)?;
            h = if i < 4 { block.forward(&concat(&[&up, &c[3 - i]])?, mode)? } else { block.forward(&up, mode)? };
        }
        self.head.logits(&h, mode)
    }
}

/// Axis-aligned box `[x0, y0, x1, y1]` in pixel units.
pub type BBox = [f32; 4];

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    /// Box in input-resolution pixel coordinates.
    pub bbox: BBox,
    pub score: f32,
}

pub struct FpsRaw {
    /// Segmentation probabilities at working resolution, (N, 1, 2H, 2W).
    pub seg_full: Tensor,
    /// Per-anchor classification logits, (N, A).
    pub cls_logits: Tensor,
    /// Per-anchor box deltas, (N, A, 4).
    pub box_deltas: Tensor,
    /// Anchors at working resolution, in the same order.
    pub anchors: Vec<BBox>,
}

pub struct FpsNet {
    backbone: ResNet50,
    fpn: Fpn,
    cls: Subnet,
    reg: Subnet,
    decoder: SegDecoder,
}

impl FpsNet {
    pub fn new(s: &mut Scope, in_ch: usize, width: usize, freeze_backbone: bool) -> Result<Self> {
        let backbone = ResNet50::new(&mut s.pp("backbone").frozen(freeze_backbone), in_ch, width)?;
        let stage_ch = [width, width * 4, width * 8, width * 16, width * 32];
        let fpn_ch = width * 4;
        let fpn = Fpn::new(&mut s.pp("fpn"), [stage_ch[2], stage_ch[3], stage_ch[4]], fpn_ch)?;
        let prior = -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln() as f32;
        let cls = Subnet::new(&mut s.pp("cls_head"), fpn_ch, ANCHORS_PER_CELL, prior)?;
        let reg = Subnet::new(&mut s.pp("box_head"), fpn_ch, ANCHORS_PER_CELL * 4, 0.0)?;
        let widths = [width * 4, width * 2, width, width, (width / 2).max(1)];
        let decoder = SegDecoder::new(&mut s.pp("seg"), stage_ch, widths)?;
        Ok(Self { backbone, fpn, cls, reg, decoder })
    }

    pub fn forward_raw(&self, x: &Tensor, mode: Mode) -> Result<FpsRaw> {
        let (n, _, h, w) = x.dims4()?;
        let xs = kernels::bilinear_resize(x, h * SCALE, w * SCALE)?;
        let c = self.backbone.forward(&xs, mode)?;
        let p = self.fpn.forward(&c[2..], mode)?;
        let mut cls_parts = Vec::with_capacity(p.len());
        let mut box_parts = Vec::with_capacity(p.len());
        let mut anchors = Vec::new();
        for (i, level) in p.iter().enumerate() {
            let (_, _, fh, fw) = level.dims4()?;
            // (N, A, H, W) -> (N, H, W, A) so anchors are ordered by cell then shape
            let cl = self.cls.forward(level, mode)?.permute((0, 2, 3, 1))?.reshape((n, fh * fw * ANCHORS_PER_CELL))?;
            let bx = self
                .reg
                .forward(level, mode)?
                .reshape((n, ANCHORS_PER_CELL, 4, fh, fw))?
                .permute((0, 3, 4, 1, 2))?
                .reshape((n, fh * fw * ANCHORS_PER_CELL, 4))?;
            cls_parts.push(cl);
            box_parts.push(bx);
            anchors.extend(level_anchors(i + 3, fh, fw));
        }
        let cls_logits = Tensor::cat(&cls_parts, 1)?;
        let box_deltas = Tensor::cat(&box_parts, 1)?;
        let seg_full = sigmoid(&self.decoder.logits(&c, mode)?)?;
        Ok(FpsRaw { seg_full, cls_logits, box_deltas, anchors })
    }

    pub fn seg_head(&self) -> &Head {
        &self.decoder.head
    }
}

/// Anchors of pyramid level `level` (stride `2^level`), cell-major.
pub fn level_anchors(level: usize, fh: usize, fw: usize) -> Vec<BBox> {
    let stride = (1usize << level) as f32;
    let size = BASE_ANCHOR_SIZE * (1 << (level - 3)) as f32;
    let mut out = Vec::with_capacity(fh * fw * ANCHORS_PER_CELL);
    for y in 0..fh {
        for x in 0..fw {
            let (cx, cy) = ((x as f32 + 0.5) * stride, (y as f32 + 0.5) * stride);
            for &ratio in &ANCHOR_RATIOS {
                for &scale in &ANCHOR_SCALES {
                    let side = size * scale;
                    let (aw, ah) = (side / ratio.sqrt(), side * ratio.sqrt());
                    out.push([cx - aw / 2.0, cy - ah / 2.0, cx + aw / 2.0, cy + ah / 2.0]);
                }
            }
        }
    }
    out
}

pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &BBox| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 { inter / union } else { 0.0 }
}

/// Regression targets `(dx, dy, dw, dh)` of `gt` relative to `anchor`.
pub fn encode_box(anchor: &BBox, gt: &BBox) -> [f32; 4] {
    let (aw, ah) = (anchor[2] - anchor[0], anchor[3] - anchor[1]);
    let (ax, ay) = (anchor[0] + aw / 2.0, anchor[1] + ah / 2.0);
    let (gw, gh) = (gt[2] - gt[0], gt[3] - gt[1]);
    let (gx, gy) = (gt[0] + gw / 2.0, gt[1] + gh / 2.0);
    [(gx - ax) / aw, (gy - ay) / ah, (gw / aw).ln(), (gh / ah).ln()]
}

pub fn decode_box(anchor: &BBox, d: &[f32; 4]) -> BBox {
    let (aw, ah) = (anchor[2] - anchor[0], anchor[3] - anchor[1]);
    let (ax, ay) = (anchor[0] + aw / 2.0, anchor[1] + ah / 2.0);
    // clamp the log-scale deltas so untrained heads cannot overflow
    let limit = (1000.0f32 / 16.0).ln();
    let (cx, cy) = (ax + d[0] * aw, ay + d[1] * ah);
    let (w, h) = (aw * d[2].min(limit).exp(), ah * d[3].min(limit).exp());
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

/// Greedy non-maximum suppression; returns kept indices by decreasing score.
pub fn nms(boxes: &[BBox], scores: &[f32], threshold: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= threshold) {
            keep.push(i);
        }
    }
    keep
}

/// Decodes, filters and suppresses per-image detections. Boxes are returned
/// at input resolution, clipped to the `h × w` frame.
pub fn postprocess(raw: &FpsRaw, h: usize, w: usize) -> Result<Vec<Vec<Detection>>> {
    let logits: Vec<Vec<f32>> = raw.cls_logits.to_vec2()?;
    let deltas: Vec<Vec<Vec<f32>>> = raw.box_deltas.to_vec3()?;
    let (fw, fh) = ((w * SCALE) as f32, (h * SCALE) as f32);
    let mut out = Vec::with_capacity(logits.len());
    for (lg, dl) in logits.iter().zip(&deltas) {
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for (i, (&l, d)) in lg.iter().zip(dl).enumerate() {
            let score = 1.0 / (1.0 + (-l).exp());
            if score < CANDIDATE_SCORE {
                continue;
            }
            let b = decode_box(&raw.anchors[i], &[d[0], d[1], d[2], d[3]]);
            boxes.push([b[0].clamp(0.0, fw), b[1].clamp(0.0, fh), b[2].clamp(0.0, fw), b[3].clamp(0.0, fh)]);
            scores.push(score);
        }
        let keep = nms(&boxes, &scores, NMS_IOU);
        let s = SCALE as f32;
        out.push(
            keep.into_iter()
                .take(MAX_DETECTIONS)
                .map(|i| {
                    let b = boxes[i];
                    Detection { bbox: [b[0] / s, b[1] / s, b[2] / s, b[3] / s], score: scores[i] }
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Binary (N, 1, h, w) mask of pixels whose centres fall inside any box with
/// score at or above [`BOX_SCORE_THRESHOLD`].
pub fn box_mask(dets: &[Vec<Detection>], h: usize, w: usize) -> Result<Tensor> {
    let mut data = vec![0f32; dets.len() * h * w];
    for (n, image) in dets.iter().enumerate() {
        for d in image.iter().filter(|d| d.score >= BOX_SCORE_THRESHOLD) {
            for y in 0..h {
                let cy = y as f32 + 0.5;
                if cy < d.bbox[1] || cy > d.bbox[3] {
                    continue;
                }
                for x in 0..w {
                    let cx = x as f32 + 0.5;
                    if cx >= d.bbox[0] && cx <= d.bbox[2] {
                        data[(n * h + y) * w + x] = 1.0;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (dets.len(), 1, h, w), &Device::Cpu)?)
}

/// Bounding boxes of the 8-connected foreground regions (`> 0.5`) of a label map.
pub fn label_boxes(label: &ndarray::ArrayView2<f32>) -> Vec<BBox> {
    let fg = label.mapv(|v| v > 0.5);
    let (labels, sizes) = dilseg_core::components::label_binary_2d(&fg, dilseg_core::components::Connectivity::Full);
    let (h, w) = label.dim();
    let n = sizes.len();
    let mut boxes = vec![[f32::MAX, f32::MAX, f32::MIN, f32::MIN]; n];
    for y in 0..h {
        for x in 0..w {
            let id = labels[[y, x]] as usize;
            if id > 0 {
                let b = &mut boxes[id - 1];
                b[0] = b[0].min(x as f32);
                b[1] = b[1].min(y as f32);
                b[2] = b[2].max(x as f32 + 1.0);
                b[3] = b[3].max(y as f32 + 1.0);
            }
        }
    }
    boxes
}

/// Anchor assignment: 1 positive, 0 negative, -1 ignored, plus the matched
/// ground-truth index for positives. Each ground-truth box also claims the
/// anchors that overlap it best, so small lesions always get a positive.
pub fn assign_anchors(anchors: &[BBox], gts: &[BBox]) -> (Vec<i8>, Vec<usize>) {
    let mut labels = vec![0i8; anchors.len()];
    let mut matched = vec![0usize; anchors.len()];
    if gts.is_empty() {
        return (labels, matched);
    }
    let mut best_for_gt = vec![0f32; gts.len()];
    let mut ious = vec![0f32; anchors.len() * gts.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        let mut best = (0f32, 0usize);
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(anchor, gt);
            ious[a * gts.len() + g] = v;
            if v > best.0 {
                best = (v, g);
            }
            best_for_gt[g] = best_for_gt[g].max(v);
        }
        matched[a] = best.1;
        labels[a] = if best.0 >= POSITIVE_IOU {
            1
        } else if best.0 < NEGATIVE_IOU {
            0
        } else {
            -1
        };
    }
    for (g, &best) in best_for_gt.iter().enumerate() {
        if best <= 0.0 {
            continue;
        }
        for a in 0..anchors.len() {
            if ious[a * gts.len() + g] == best {
                labels[a] = 1;
                matched[a] = g;
            }
        }
    }
    (labels, matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn iou_basics() {
        let a = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert!((iou(&a, &[1.0, 0.0, 3.0, 2.0]) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn box_coding_round_trips() {
        let anchor = [10.0, 12.0, 26.0, 40.0];
        let gt = [8.0, 15.0, 30.0, 33.0];
        let d = encode_box(&anchor, &gt);
        let back = decode_box(&anchor, &d);
        for i in 0..4 {
            assert!((back[i] - gt[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn anchors_have_requested_shapes() {
        let a = level_anchors(3, 2, 2);
        assert_eq!(a.len(), 4 * ANCHORS_PER_CELL);
        // first anchor: ratio 0.5, scale 1 at cell (0, 0)
        let w = a[0][2] - a[0][0];
        let h = a[0][3] - a[0][1];
        assert!((w * h - 256.0).abs() < 1e-3);
        assert!((h / w - 0.5).abs() < 1e-5);
        assert!(((a[0][0] + a[0][2]) / 2.0 - 4.0).abs() < 1e-5);
    }

    #[test]
    fn nms_suppresses_overlaps() {
        let boxes = [[0.0, 0.0, 10.0, 10.0], [1.0, 1.0, 10.0, 10.0], [20.0, 20.0, 30.0, 30.0]];
        let keep = nms(&boxes, &[0.9, 0.8, 0.7], 0.5);
        assert_eq!(keep, vec![0, 2]);
    }

    #[test]
    fn every_ground_truth_gets_a_positive() {
        let anchors = level_anchors(3, 8, 8);
        let gts = [[3.0, 3.0, 6.0, 5.0]];
        let (labels, matched) = assign_anchors(&anchors, &gts);
        assert!(labels.iter().any(|&l| l == 1));
        assert!(labels.iter().zip(&matched).filter(|(l, _)| **l == 1).all(|(_, m)| *m == 0));
    }

    #[test]
    fn boxes_from_labels() {
        let mut l = Array2::<f32>::zeros((8, 8));
        l[[1, 2]] = 1.0;
        l[[2, 3]] = 1.0;
        l[[6, 6]] = 0.7;
        let b = label_boxes(&l.view());
        assert_eq!(b.len(), 2);
        assert!(b.contains(&[2.0, 1.0, 4.0, 3.0]));
        assert!(b.contains(&[6.0, 6.0, 7.0, 7.0]));
    }

    #[test]
    fn mask_covers_confident_boxes_only() {
        let dets = vec![vec![
            Detection { bbox: [0.0, 0.0, 2.0, 2.0], score: 0.9 },
            Detection { bbox: [2.0, 2.0, 4.0, 4.0], score: 0.3 },
        ]];
        let m: Vec<f32> = box_mask(&dets, 4, 4).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(m.iter().sum::<f32>(), 4.0);
        assert_eq!(m[0], 1.0);
        assert_eq!(m[15], 0.0);
    }
}
