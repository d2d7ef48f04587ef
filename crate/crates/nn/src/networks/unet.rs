//! Unet and Res-Unet: the same encoder-decoder topology with either plain
//! double-conv blocks or pre-activation residual units.

use candle_core::Tensor;

use crate::error::Result;
use crate::kernels;
use crate::layers::{BatchNorm2d, Conv2d, ConvBnRelu, DoubleConv, Head, Mode, concat};
use crate::params::Scope;

/// BN → ReLU → conv → BN → ReLU → conv, plus a projected shortcut when the
/// channel count changes. The first unit of the network skips the leading
/// activation because it sees the raw input.
pub struct ResUnit {
    pre_bn: Option<BatchNorm2d>,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl ResUnit {
    pub fn new(s: &mut Scope, cin: usize, cout: usize, first: bool) -> Result<Self> {
        let pre_bn = if first { None } else { Some(BatchNorm2d::new(&mut s.pp("bn1"), cin)?) };
        let shortcut = if cin != cout {
            Some((
                Conv2d::new(&mut s.pp("shortcut.conv"), cin, cout, 1, 1, 0, false)?,
                BatchNorm2d::new(&mut s.pp("shortcut.bn"), cout)?,
            ))
        } else {
            None
        };
        Ok(Self {
            pre_bn,
            conv1: Conv2d::new(&mut s.pp("conv1"), cin, cout, 3, 1, 1, false)?,
            bn2: BatchNorm2d::new(&mut s.pp("bn2"), cout)?,
            conv2: Conv2d::new(&mut s.pp("conv2"), cout, cout, 3, 1, 1, false)?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = match &self.pre_bn {
            Some(bn) => bn.forward(x, mode)?.relu()?,
            None => x.clone(),
        };
        let h = self.conv1.forward(&h, mode)?;
        let h = self.conv2.forward(&self.bn2.forward(&h, mode)?.relu()?, mode)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x, mode)?, mode)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}

enum Block {
    Plain(DoubleConv),
    Residual(ResUnit),
}

impl Block {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Block::Plain(b) => b.forward(x, mode),
            Block::Residual(b) => b.forward(x, mode),
        }
    }
}

pub struct EncoderDecoder {
    encoder: Vec<Block>,
    up_convs: Vec<Option<ConvBnRelu>>,
    decoder: Vec<Block>,
    head: Head,
}

impl EncoderDecoder {
    /// Plain Unet: the upsampled map passes through a 3×3 conv that halves
    /// its width before concatenation with the skip connection.
    pub fn unet(s: &mut Scope, in_ch: usize, widths: &[usize]) -> Result<Self> {
        Self::build(s, in_ch, widths, false)
    }

    pub fn resunet(s: &mut Scope, in_ch: usize, widths: &[usize]) -> Result<Self> {
        Self::build(s, in_ch, widths, true)
    }

    fn build(s: &mut Scope, in_ch: usize, widths: &[usize], residual: bool) -> Result<Self> {
        let levels = widths.len() - 1;
        let mut encoder = Vec::with_capacity(levels + 1);
        for (i, &w) in widths.iter().enumerate() {
            let cin = if i == 0 { in_ch } else { widths[i - 1] };
            let mut bs = s.pp(format!("enc{i}"));
            encoder.push(if residual {
                Block::Residual(ResUnit::new(&mut bs, cin, w, i == 0)?)
            } else {
                Block::Plain(DoubleConv::new(&mut bs, cin, w)?)
            });
        }
        let mut up_convs = Vec::with_capacity(levels);
        let mut decoder = Vec::with_capacity(levels);
        for i in 0..levels {
            let below = widths[i + 1];
            let (up, cin) = if residual {
                (None, below + widths[i])
            } else {
                (Some(ConvBnRelu::new(&mut s.pp(format!("up{i}")), below, widths[i], 3)?), 2 * widths[i])
            };
            up_convs.push(up);
            let mut bs = s.pp(format!("dec{i}"));
            decoder.push(if residual {
                Block::Residual(ResUnit::new(&mut bs, cin, widths[i], false)?)
            } else {
                Block::Plain(DoubleConv::new(&mut bs, cin, widths[i])?)
            });
        }
        let head = Head::new(&mut s.pp("head"), widths[0])?;
        Ok(Self { encoder, up_convs, decoder, head })
    }

    pub fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for (i, block) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = kernels::max_pool2d(&h, 2, 2, 0)?;
            }
            h = block.forward(&h, mode)?;
            skips.push(h.clone());
        }
        for i in (0..self.decoder.len()).rev() {
            let mut up = kernels::upsample(&h, 2)?;
            if let Some(conv) = &self.up_convs[i] {
                up = conv.forward(&up, mode)?;
            }
            h = self.decoder[i].forward(&concat(&[&skips[i], &up])?, mode)?;
        }
        self.head.logits(&h, mode)
    }

    pub fn head(&self) -> &Head {
        &self.head
    }
}
