//! CPU kernels for the image operations the networks need.
//!
//! Each kernel is a candle custom op with its own backward pass. Convolution
//! is lowered to im2col plus a single-precision GEMM, which is several times
//! faster than the generic candle CPU path on small batches.

use std::sync::{Arc, Mutex};

use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Result, Shape, Tensor, bail};

fn f32_slice<'a>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [f32]> {
    let data = match s {
        CpuStorage::F32(d) => d,
        _ => bail!("kernel supports f32 tensors only"),
    };
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("kernel requires a contiguous tensor"),
    }
}

/// `c = a * b + beta * c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
    rsc: isize,
) {
    debug_assert!(c.len() >= (m - 1) * rsc as usize + n);
    // SAFETY: the callers size every buffer for the given dimensions and
    // strides; matrixmultiply only reads/writes inside those extents.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn ho(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }
    fn wo(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let (ho, wo) = (g.ho(), g.wo());
    let p = ho * wo;
    for c in 0..g.cin {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && (ix as usize) < g.w { srow[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let (ho, wo) = (g.ho(), g.wo());
    let p = ho * wo;
    for c in 0..g.cin {
        let dst = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv {
    stride: usize,
    pad: usize,
}

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "conv2d-gemm"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s1, l1)?;
        let wt = f32_slice(s2, l2)?;
        let (n, cin, h, w) = l1.shape().dims4()?;
        let (cout, wcin, kh, kw) = l2.shape().dims4()?;
        if wcin != cin {
            bail!("conv2d: input has {cin} channels, kernel expects {wcin}");
        }
        if h + 2 * self.pad < kh || w + 2 * self.pad < kw {
            bail!("conv2d: input {h}x{w} smaller than kernel {kh}x{kw}");
        }
        let g = ConvGeom { cin, h, w, kh, kw, stride: self.stride, pad: self.pad };
        let p = g.ho() * g.wo();
        let k = cin * kh * kw;
        let mut out = vec![0f32; n * cout * p];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0f32; k * p] };
        for b in 0..n {
            let xb = &x[b * cin * h * w..(b + 1) * cin * h * w];
            let src: &[f32] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            let ob = &mut out[b * cout * p..(b + 1) * cout * p];
            gemm(cout, k, p, wt, (k as isize, 1), src, (p as isize, 1), 0.0, ob, p as isize);
        }
        Ok((CpuStorage::F32(out), Shape::from((n, cout, g.ho(), g.wo()))))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let gy = gy.contiguous()?;
        let (_, _, h, wd) = x.dims4()?;
        let gx = gy.apply_op2_no_bwd(w, &ConvGradInput { stride: self.stride, pad: self.pad, h, w: wd })?;
        let (_, _, kh, kw) = w.dims4()?;
        let gw = x.apply_op2_no_bwd(&gy, &ConvGradWeight { stride: self.stride, pad: self.pad, kh, kw })?;
        Ok((Some(gx), Some(gw)))
    }
}

struct ConvGradInput {
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let gy = f32_slice(s1, l1)?;
        let wt = f32_slice(s2, l2)?;
        let (n, cout, ho, wo) = l1.shape().dims4()?;
        let (_, cin, kh, kw) = l2.shape().dims4()?;
        let g = ConvGeom { cin, h: self.h, w: self.w, kh, kw, stride: self.stride, pad: self.pad };
        let p = ho * wo;
        let k = cin * kh * kw;
        let plane = cin * self.h * self.w;
        let mut gx = vec![0f32; n * plane];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0f32; k * p] };
        for b in 0..n {
            let gyb = &gy[b * cout * p..(b + 1) * cout * p];
            let gxb = &mut gx[b * plane..(b + 1) * plane];
            if g.is_pointwise() {
                gemm(k, cout, p, wt, (1, k as isize), gyb, (p as isize, 1), 0.0, gxb, p as isize);
            } else {
                gemm(k, cout, p, wt, (1, k as isize), gyb, (p as isize, 1), 0.0, &mut col, p as isize);
                col2im(&col, &g, gxb);
            }
        }
        Ok((CpuStorage::F32(gx), Shape::from((n, cin, self.h, self.w))))
    }
}

struct ConvGradWeight {
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
}

impl CustomOp2 for ConvGradWeight {
    fn name(&self) -> &'static str {
        "conv2d-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s1, l1)?;
        let gy = f32_slice(s2, l2)?;
        let (n, cin, h, w) = l1.shape().dims4()?;
        let (_, cout, ho, wo) = l2.shape().dims4()?;
        let g = ConvGeom { cin, h, w, kh: self.kh, kw: self.kw, stride: self.stride, pad: self.pad };
        let p = ho * wo;
        let k = cin * self.kh * self.kw;
        let mut gw = vec![0f32; cout * k];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0f32; k * p] };
        for b in 0..n {
            let xb = &x[b * cin * h * w..(b + 1) * cin * h * w];
            let src: &[f32] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            let gyb = &gy[b * cout * p..(b + 1) * cout * p];
            gemm(cout, p, k, gyb, (p as isize, 1), src, (1, p as isize), 1.0, &mut gw, k as isize);
        }
        Ok((CpuStorage::F32(gw), Shape::from((cout, cin, self.kh, self.kw))))
    }
}

/// 2D convolution without bias; `x` is (N, Cin, H, W), `w` is (Cout, Cin, Kh, Kw).
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    if stride == 0 {
        bail!("conv2d: stride must be positive");
    }
    let x = x.contiguous()?;
    let w = w.contiguous()?;
    x.apply_op2(&w, Conv { stride, pad })
}

#[derive(Clone, Copy)]
struct PoolGeom {
    k: usize,
    s: usize,
    p: usize,
}

impl PoolGeom {
    fn out(&self, n: usize) -> usize {
        (n + 2 * self.p - self.k) / self.s + 1
    }

    /// Index of the maximum inside each pooling window, per output pixel.
    fn argmax(&self, plane: &[f32], h: usize, w: usize) -> Vec<usize> {
        let (ho, wo) = (self.out(h), self.out(w));
        let mut idx = Vec::with_capacity(ho * wo);
        if self.p == 0 && self.k == self.s {
            // non-overlapping windows that never leave the plane
            let k = self.k;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = oy * k * w + ox * k;
                    let mut best_v = plane[best];
                    for ky in 0..k {
                        let row = (oy * k + ky) * w + ox * k;
                        for (kx, &v) in plane[row..row + k].iter().enumerate() {
                            if v > best_v {
                                best = row + kx;
                                best_v = v;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
            return idx;
        }
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = usize::MAX;
                let mut best_v = f32::NEG_INFINITY;
                for ky in 0..self.k {
                    let iy = (oy * self.s + ky) as isize - self.p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.s + kx) as isize - self.p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        if best == usize::MAX || plane[i] > best_v {
                            best = i;
                            best_v = plane[i];
                        }
                    }
                }
                idx.push(best);
            }
        }
        idx
    }
}

struct MaxPool(PoolGeom);

impl CustomOp1 for MaxPool {
    fn name(&self) -> &'static str {
        "max-pool2d"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s, l)?;
        let (n, c, h, w) = l.shape().dims4()?;
        let g = self.0;
        if h + 2 * g.p < g.k || w + 2 * g.p < g.k {
            bail!("max_pool2d: input {h}x{w} smaller than window {}", g.k);
        }
        let (ho, wo) = (g.out(h), g.out(w));
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in x.chunks_exact(h * w) {
            out.extend(g.argmax(plane, h, w).into_iter().map(|i| plane[i]));
        }
        Ok((CpuStorage::F32(out), Shape::from((n, c, ho, wo))))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<Option<Tensor>> {
        let gy = gy.contiguous()?;
        Ok(Some(x.apply_op2_no_bwd(&gy, &MaxPoolGrad(self.0))?))
    }
}

struct MaxPoolGrad(PoolGeom);

impl CustomOp2 for MaxPoolGrad {
    fn name(&self) -> &'static str {
        "max-pool2d-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s1, l1)?;
        let gy = f32_slice(s2, l2)?;
        let (n, c, h, w) = l1.shape().dims4()?;
        let (_, _, ho, wo) = l2.shape().dims4()?;
        let mut gx = vec![0f32; n * c * h * w];
        for ((plane, gplane), gyp) in x.chunks_exact(h * w).zip(gx.chunks_exact_mut(h * w)).zip(gy.chunks_exact(ho * wo)) {
            for (i, g) in self.0.argmax(plane, h, w).into_iter().zip(gyp) {
                gplane[i] += g;
            }
        }
        Ok((CpuStorage::F32(gx), Shape::from((n, c, h, w))))
    }
}

/// Max pooling with square window `k`, stride `s` and padding `p` (floor mode).
pub fn max_pool2d(x: &Tensor, k: usize, s: usize, p: usize) -> Result<Tensor> {
    if k == 0 || s == 0 || p * 2 > k {
        bail!("max_pool2d: invalid window k={k} s={s} p={p}");
    }
    x.contiguous()?.apply_op1(MaxPool(PoolGeom { k, s, p }))
}

struct Upsample(usize);

impl CustomOp1 for Upsample {
    fn name(&self) -> &'static str {
        "upsample-nearest"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s, l)?;
        let (n, c, h, w) = l.shape().dims4()?;
        let f = self.0;
        let (ho, wo) = (h * f, w * f);
        let mut out = vec![0f32; n * c * ho * wo];
        for (plane, oplane) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
            for oy in 0..ho {
                let srow = &plane[(oy / f) * w..(oy / f + 1) * w];
                let orow = &mut oplane[oy * wo..(oy + 1) * wo];
                for (ox, o) in orow.iter_mut().enumerate() {
                    *o = srow[ox / f];
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((n, c, ho, wo))))
    }

    fn bwd(&self, _x: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(gy.contiguous()?.apply_op1_no_bwd(&SumPool(self.0))?))
    }
}

struct SumPool(usize);

impl CustomOp1 for SumPool {
    fn name(&self) -> &'static str {
        "sum-pool"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s, l)?;
        let (n, c, h, w) = l.shape().dims4()?;
        let f = self.0;
        if h % f != 0 || w % f != 0 {
            bail!("sum_pool: {h}x{w} not divisible by {f}");
        }
        let (ho, wo) = (h / f, w / f);
        let mut out = vec![0f32; n * c * ho * wo];
        for (plane, oplane) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
            for y in 0..h {
                let srow = &plane[y * w..(y + 1) * w];
                let orow = &mut oplane[(y / f) * wo..(y / f + 1) * wo];
                for (x, v) in srow.iter().enumerate() {
                    orow[x / f] += v;
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((n, c, ho, wo))))
    }

    fn bwd(&self, _x: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(gy.contiguous()?.apply_op1_no_bwd(&Upsample(self.0))?))
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        bail!("upsample: factor must be positive");
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    x.contiguous()?.apply_op1(Upsample(factor))
}

/// Non-overlapping average pooling by an integer factor.
pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        bail!("avg_pool: factor must be positive");
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let summed = x.contiguous()?.apply_op1(SumPool(factor))?;
    summed.affine(1.0 / (factor * factor) as f64, 0.0)
}

/// Batch statistics recorded by the most recent training-mode forward pass.
#[derive(Clone, Debug, Default)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance.
    pub var: Vec<f32>,
}

pub const BN_EPS: f32 = 1e-5;

#[derive(Clone)]
struct BatchNormTrain {
    stats: Arc<Mutex<Option<BatchStats>>>,
}

fn channel_moments(x: &[f32], n: usize, c: usize, hw: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (n * hw) as f64;
    let mut mean = vec![0f32; c];
    let mut var = vec![0f32; c];
    for ch in 0..c {
        let mut s = 0f64;
        for b in 0..n {
            s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0f64;
        for b in 0..n {
            ss += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m as f32;
        var[ch] = (ss / count) as f32;
    }
    (mean, var)
}

impl CustomOp3 for BatchNormTrain {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s1, l1)?;
        let gamma = f32_slice(s2, l2)?;
        let beta = f32_slice(s3, l3)?;
        let (n, c, h, w) = l1.shape().dims4()?;
        let hw = h * w;
        if gamma.len() != c || beta.len() != c {
            bail!("batch_norm: expected {c} affine parameters");
        }
        let (mean, var) = channel_moments(x, n, c, hw);
        let mut out = vec![0f32; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
                let scale = gamma[ch] * inv;
                let shift = beta[ch] - mean[ch] * scale;
                let off = (b * c + ch) * hw;
                for (o, &v) in out[off..off + hw].iter_mut().zip(&x[off..off + hw]) {
                    *o = v * scale + shift;
                }
            }
        }
        let count = (n * hw) as f32;
        let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        *self.stats.lock().expect("stats lock") =
            Some(BatchStats { mean, var: var.iter().map(|v| v * unbiased).collect() });
        Ok((CpuStorage::F32(out), l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        gy: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let gy = gy.contiguous()?;
        let packed = x.apply_op3_no_bwd(gamma, &gy, &BatchNormGrad)?;
        let numel = x.elem_count();
        let c = gamma.elem_count();
        let gx = packed.narrow(0, 0, numel)?.reshape(x.shape())?;
        let gg = packed.narrow(0, numel, c)?;
        let gb = packed.narrow(0, numel + c, c)?;
        Ok((Some(gx), Some(gg), Some(gb)))
    }
}

/// Computes the input, scale and shift gradients in one pass and returns them
/// concatenated into a flat vector.
struct BatchNormGrad;

impl CustomOp3 for BatchNormGrad {
    fn name(&self) -> &'static str {
        "batch-norm-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s1, l1)?;
        let gamma = f32_slice(s2, l2)?;
        let gy = f32_slice(s3, l3)?;
        let (n, c, h, w) = l1.shape().dims4()?;
        let hw = h * w;
        let count = (n * hw) as f64;
        let (mean, var) = channel_moments(x, n, c, hw);
        let mut out = vec![0f32; x.len() + 2 * c];
        for ch in 0..c {
            let inv = 1.0 / (var[ch] as f64 + BN_EPS as f64).sqrt();
            let (mut sum_gy, mut sum_gy_xhat) = (0f64, 0f64);
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for (&g, &v) in gy[off..off + hw].iter().zip(&x[off..off + hw]) {
                    sum_gy += g as f64;
                    sum_gy_xhat += g as f64 * (v as f64 - mean[ch] as f64) * inv;
                }
            }
            let mg = sum_gy / count;
            let mgx = sum_gy_xhat / count;
            let k = gamma[ch] as f64 * inv;
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xhat = (x[i] as f64 - mean[ch] as f64) * inv;
                    out[i] = (k * (gy[i] as f64 - mg - xhat * mgx)) as f32;
                }
            }
            out[x.len() + ch] = sum_gy_xhat as f32;
            out[x.len() + c + ch] = sum_gy as f32;
        }
        let len = out.len();
        Ok((CpuStorage::F32(out), Shape::from(len)))
    }
}

/// Training-mode batch normalisation over (N, H, W) per channel.
///
/// Returns the normalised tensor and the batch statistics (mean and unbiased
/// variance) for the running-average update.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, BatchStats)> {
    let stats = Arc::new(Mutex::new(None));
    let op = BatchNormTrain { stats: stats.clone() };
    let y = x.contiguous()?.apply_op3(gamma, beta, op)?;
    let recorded = stats.lock().expect("stats lock").take().unwrap_or_default();
    Ok((y, recorded))
}

struct ChannelAffine {
    scale: Vec<f32>,
    shift: Vec<f32>,
}

impl CustomOp1 for ChannelAffine {
    fn name(&self) -> &'static str {
        "channel-affine"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s, l)?;
        let (_, c, h, w) = l.shape().dims4()?;
        if self.scale.len() != c {
            bail!("channel_affine: expected {c} channels");
        }
        let hw = h * w;
        let mut out = vec![0f32; x.len()];
        for (i, (o, src)) in out.chunks_exact_mut(hw).zip(x.chunks_exact(hw)).enumerate() {
            let ch = i % c;
            for (o, &v) in o.iter_mut().zip(src) {
                *o = v * self.scale[ch] + self.shift[ch];
            }
        }
        Ok((CpuStorage::F32(out), l.shape().clone()))
    }
}

/// Inference-mode batch normalisation from running statistics (no gradient).
pub fn batch_norm_eval(x: &Tensor, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) -> Result<Tensor> {
    let scale: Vec<f32> = gamma.iter().zip(var).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();
    let shift: Vec<f32> = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
    x.contiguous()?.apply_op1_no_bwd(&ChannelAffine { scale, shift })
}

struct Bilinear {
    oh: usize,
    ow: usize,
}

fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

impl CustomOp1 for Bilinear {
    fn name(&self) -> &'static str {
        "bilinear-resize"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let x = f32_slice(s, l)?;
        let (n, c, h, w) = l.shape().dims4()?;
        let ys = axis_weights(h, self.oh);
        let xs = axis_weights(w, self.ow);
        let mut out = vec![0f32; n * c * self.oh * self.ow];
        for (plane, oplane) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(self.oh * self.ow)) {
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    oplane[oy * self.ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Ok((CpuStorage::F32(out), Shape::from((n, c, self.oh, self.ow))))
    }
}

/// Half-pixel bilinear resize of an (N, C, H, W) tensor; not differentiable.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    if oh == 0 || ow == 0 {
        bail!("bilinear_resize: empty output size");
    }
    x.contiguous()?.apply_op1_no_bwd(&Bilinear { oh, ow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn conv_matches_candle_forward_and_backward() {
        for &(k, stride, pad) in &[(3, 1, 1), (1, 1, 0), (3, 2, 1), (7, 2, 3), (1, 2, 0)] {
            let x = Var::from_tensor(&randn(&[2, 3, 9, 10], 1)).unwrap();
            let w = Var::from_tensor(&randn(&[4, 3, k, k], 2)).unwrap();
            let ours = conv2d(&x, &w, stride, pad).unwrap();
            let theirs = x.conv2d(&w, pad, stride, 1, 1).unwrap();
            assert_eq!(ours.dims(), theirs.dims());
            assert!(max_abs_diff(&ours, &theirs) < 1e-4);

            // conv is bilinear, so the gradients must satisfy the adjoint identities
            // <gx, dx> = <conv(dx, w), probe> and <gw, dw> = <conv(x, dw), probe>
            let probe = randn(ours.dims(), 3);
            let grads = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let dot = |a: &Tensor, b: &Tensor| (a * b).unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
            let dx = randn(x.dims(), 4);
            let dw = randn(w.dims(), 5);
            let lhs = dot(grads.get(&x).unwrap(), &dx);
            let rhs = dot(&dx.conv2d(&w, pad, stride, 1, 1).unwrap(), &probe);
            assert!((lhs - rhs).abs() < 1e-3 * rhs.abs().max(1.0), "k={k} s={stride}: {lhs} vs {rhs}");
            let lhs = dot(grads.get(&w).unwrap(), &dw);
            let rhs = dot(&x.conv2d(&dw, pad, stride, 1, 1).unwrap(), &probe);
            assert!((lhs - rhs).abs() < 1e-3 * rhs.abs().max(1.0), "k={k} s={stride}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn single_pixel_conv_counts() {
        let x = Tensor::ones((1, 1, 3, 3), DType::F32, &Device::Cpu).unwrap();
        let w = Tensor::ones((1, 1, 3, 3), DType::F32, &Device::Cpu).unwrap();
        let y = conv2d(&x, &w, 1, 1).unwrap();
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v, vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn max_pool_matches_candle() {
        let x = Var::from_tensor(&randn(&[2, 3, 8, 8], 4)).unwrap();
        let ours = max_pool2d(&x, 2, 2, 0).unwrap();
        let theirs = x.max_pool2d(2).unwrap();
        assert!(max_abs_diff(&ours, &theirs) < 1e-7);
        let g1 = ours.sum_all().unwrap().backward().unwrap();
        let gx = g1.get(&x).unwrap();
        // every window routes exactly one unit of gradient
        assert_eq!(gx.sum_all().unwrap().to_scalar::<f32>().unwrap(), 2.0 * 3.0 * 16.0);
    }

    #[test]
    fn padded_max_pool_floor_mode() {
        let x = randn(&[1, 1, 7, 7], 5);
        let y = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let xv: Vec<Vec<f32>> = x.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        let yv: Vec<Vec<f32>> = y.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let mut m = f32::NEG_INFINITY;
                for iy in (2 * oy as isize - 1)..=(2 * oy as isize + 1) {
                    for ix in (2 * ox as isize - 1)..=(2 * ox as isize + 1) {
                        if (0..7).contains(&iy) && (0..7).contains(&ix) {
                            m = m.max(xv[iy as usize][ix as usize]);
                        }
                    }
                }
                assert_eq!(yv[oy][ox], m);
            }
        }
    }

    #[test]
    fn upsample_and_sum_pool_are_adjoint() {
        let x = randn(&[2, 3, 4, 5], 6);
        let y = randn(&[2, 3, 8, 10], 7);
        let up = upsample(&x, 2).unwrap();
        assert!(max_abs_diff(&up, &x.upsample_nearest2d(8, 10).unwrap()) < 1e-7);
        let down = y.apply_op1_no_bwd(&SumPool(2)).unwrap();
        let lhs = (&up * &y).unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        let rhs = (&x * &down).unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn avg_pool_matches_candle() {
        let x = randn(&[1, 2, 8, 8], 8);
        assert!(max_abs_diff(&avg_pool(&x, 2).unwrap(), &x.avg_pool2d(2).unwrap()) < 1e-6);
    }

    #[test]
    fn batch_norm_matches_reference() {
        let x = Var::from_tensor(&randn(&[3, 4, 5, 6], 9)).unwrap();
        let g = Var::from_tensor(&randn(&[4], 10)).unwrap();
        let b = Var::from_tensor(&randn(&[4], 11)).unwrap();
        let (ours, stats) = batch_norm_train(&x, &g, &b).unwrap();

        let mean = x.mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
        let xc = x.broadcast_sub(&mean).unwrap();
        let var = xc.sqr().unwrap().mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
        let xhat = xc.broadcast_div(&(var + BN_EPS as f64).unwrap().sqrt().unwrap()).unwrap();
        let theirs = xhat
            .broadcast_mul(&g.reshape((1, 4, 1, 1)).unwrap())
            .unwrap()
            .broadcast_add(&b.reshape((1, 4, 1, 1)).unwrap())
            .unwrap();
        assert!(max_abs_diff(&ours, &theirs) < 1e-4);

        let m: Vec<f32> = mean.flatten_all().unwrap().to_vec1().unwrap();
        for (a, e) in stats.mean.iter().zip(&m) {
            assert!((a - e).abs() < 1e-5);
        }
        assert_eq!(stats.var.len(), 4);

        let probe = randn(&[3, 4, 5, 6], 12);
        let g1 = (&ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (&theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &g, &b] {
            assert!(max_abs_diff(g1.get(v).unwrap(), g2.get(v).unwrap()) < 1e-3);
        }
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let x = randn(&[1, 2, 2, 2], 13);
        let y = batch_norm_eval(&x, &[2.0, 1.0], &[0.5, 0.0], &[0.0, 1.0], &[1.0 - BN_EPS, 4.0 - BN_EPS]).unwrap();
        let xv: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        let yv: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        for i in 0..4 {
            assert!((yv[i] - (2.0 * xv[i] + 0.5)).abs() < 1e-5);
            assert!((yv[4 + i] - (xv[4 + i] - 1.0) / 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = randn(&[1, 1, 6, 6], 14);
        assert!(max_abs_diff(&bilinear_resize(&x, 6, 6).unwrap(), &x) < 1e-7);
        let c = Tensor::full(3.5f32, (1, 2, 4, 4), &Device::Cpu).unwrap();
        let up = bilinear_resize(&c, 8, 8).unwrap();
        assert_eq!(up.dims(), &[1, 2, 8, 8]);
        assert!(max_abs_diff(&up, &Tensor::full(3.5f32, (1, 2, 8, 8), &Device::Cpu).unwrap()) < 1e-6);
    }
}
