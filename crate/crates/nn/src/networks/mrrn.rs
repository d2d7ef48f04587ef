//! Multiple-resolution residually connected network.
//!
//! Besides the usual encoder/decoder path the network keeps one residual
//! feature stream per resolution. Stream `k` lives at level `k - 1` and is
//! created from the path output at that level. Every residual connection unit
//! (RCU) pools its stream down to the current level, concatenates it with the
//! path features, applies two conv-BN-ReLU layers, and writes a 1×1 projection
//! of the result back into the stream (upsampled to the stream's resolution).
//!
//! Level `l` of the encoder visits streams `1..=l`; level `l` of the decoder
//! visits streams `1..=l+1`, so the last unit of the network combines the path
//! with the full-resolution stream. The deep-supervision tap at level 1 sits
//! on the output of the final decoder conv block just before that unit.

use candle_core::Tensor;

use crate::error::Result;
use crate::kernels;
use crate::layers::{Conv2d, ConvBnRelu, DoubleConv, Head, Mode, concat};
use crate::networks::Ablation;
use crate::params::Scope;

struct Rcu {
    stream: usize,
    /// Resolution ratio between the stream and the path.
    factor: usize,
    conv_a: ConvBnRelu,
    conv_b: ConvBnRelu,
    /// Absent on the last unit to touch a stream, whose update nobody reads.
    project: Option<Conv2d>,
}

impl Rcu {
    fn new(s: &mut Scope, path_ch: usize, stream_ch: usize, stream: usize, factor: usize, writes: bool) -> Result<Self> {
        let project = if writes { Some(Conv2d::new(&mut s.pp("project"), path_ch, stream_ch, 1, 1, 0, true)?) } else { None };
        Ok(Self {
            stream,
            factor,
            conv_a: ConvBnRelu::new(&mut s.pp("a"), path_ch + stream_ch, path_ch, 3)?,
            conv_b: ConvBnRelu::new(&mut s.pp("b"), path_ch, path_ch, 3)?,
            project,
        })
    }

    fn forward(&self, x: &Tensor, streams: &mut [Option<Tensor>], mode: Mode) -> Result<Tensor> {
        let s = streams[self.stream - 1].as_ref().expect("stream created before use");
        let pooled = if self.factor > 1 { kernels::max_pool2d(s, self.factor, self.factor, 0)? } else { s.clone() };
        let h = self.conv_b.forward(&self.conv_a.forward(&concat(&[x, &pooled])?, mode)?, mode)?;
        if let Some(project) = &self.project {
            let update = kernels::upsample(&project.forward(&h, mode)?, self.factor)?;
            streams[self.stream - 1] = Some((s + update)?);
        }
        Ok(h)
    }
}

struct Level {
    block: ConvBnRelu,
    units: Vec<Rcu>,
}

pub struct Mrrn {
    stem: DoubleConv,
    encoder: Vec<Level>,
    decoder: Vec<Level>,
    head: Head,
    aux: Option<(usize, Head)>,
    levels: usize,
}

fn stream_active(ablation: Ablation, k: usize) -> bool {
    match ablation {
        Ablation::None => true,
        Ablation::DropFullresStream => k != 1,
        Ablation::KeepOnlyFullresStream => k == 1,
    }
}

impl Mrrn {
    /// `supervision_level` adds the deep-supervision head (`None` for plain MRRN).
    pub fn new(
        s: &mut Scope,
        in_ch: usize,
        widths: &[usize],
        ablation: Ablation,
        supervision_level: Option<usize>,
    ) -> Result<Self> {
        let levels = widths.len() - 1;
        let stem = DoubleConv::new(&mut s.pp("stem"), in_ch, widths[0])?;
        // Streams visited by each level in execution order: encoder 1..=levels,
        // then decoder levels-1..=0. A unit writes back only if a later unit
        // reads the same stream.
        let visits: Vec<(usize, usize)> = (1..=levels)
            .flat_map(|l| (1..=l).map(move |k| (l, k)))
            .chain((0..levels).rev().flat_map(|l| (1..=l + 1).map(move |k| (l, k))))
            .filter(|&(_, k)| stream_active(ablation, k))
            .collect();
        let mut visited = 0;
        let mut make_units = |s: &mut Scope, level: usize, max_stream: usize| -> Result<Vec<Rcu>> {
            let mut units = Vec::new();
            for k in (1..=max_stream).filter(|&k| stream_active(ablation, k)) {
                visited += 1;
                let writes = visits[visited..].iter().any(|&(_, j)| j == k);
                units.push(Rcu::new(&mut s.pp(format!("rcu{k}")), widths[level], widths[k - 1], k, 1 << (level + 1 - k), writes)?);
            }
            Ok(units)
        };
        let mut encoder = Vec::with_capacity(levels);
        for l in 1..=levels {
            let mut ls = s.pp(format!("enc{l}"));
            let block = ConvBnRelu::new(&mut ls.pp("block"), widths[l - 1], widths[l], 3)?;
            let units = make_units(&mut ls, l, l)?;
            encoder.push(Level { block, units });
        }
        let mut decoder = Vec::with_capacity(levels);
        for l in (0..levels).rev() {
            let mut ls = s.pp(format!("dec{l}"));
            let block = ConvBnRelu::new(&mut ls.pp("block"), widths[l + 1], widths[l], 3)?;
            let units = make_units(&mut ls, l, l + 1)?;
            decoder.push(Level { block, units });
        }
        let head = Head::new(&mut s.pp("head"), widths[0])?;
        let aux = match supervision_level {
            Some(m) => Some((m, Head::new(&mut s.pp("aux_head"), widths[m - 1])?)),
            None => None,
        };
        Ok(Self { stem, encoder, decoder, head, aux, levels })
    }

    /// Main logits and, for the deep-supervision variant, auxiliary logits at
    /// full resolution.
    pub fn logits(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>)> {
        let mut streams: Vec<Option<Tensor>> = vec![None; self.levels];
        let mut h = self.stem.forward(x, mode)?;
        streams[0] = Some(h.clone());
        for (i, level) in self.encoder.iter().enumerate() {
            let l = i + 1;
            h = level.block.forward(&kernels::max_pool2d(&h, 2, 2, 0)?, mode)?;
            for unit in &level.units {
                h = unit.forward(&h, &mut streams, mode)?;
            }
            if l < self.levels {
                streams[l] = Some(h.clone());
            }
        }
        let mut aux = None;
        for (i, level) in self.decoder.iter().enumerate() {
            let l = self.levels - 1 - i;
            h = level.block.forward(&kernels::upsample(&h, 2)?, mode)?;
            let tap = self.aux.as_ref().filter(|(m, _)| *m == 1 && l == 0);
            if let Some((_, head)) = tap {
                aux = Some(head.logits(&h, mode)?);
            }
            for unit in &level.units {
                h = unit.forward(&h, &mut streams, mode)?;
            }
            let tap = self.aux.as_ref().filter(|(m, _)| *m >= 2 && l == m - 1);
            if let Some((_, head)) = tap {
                aux = Some(kernels::upsample(&head.logits(&h, mode)?, 1 << l)?);
            }
        }
        Ok((self.head.logits(&h, mode)?, aux))
    }

    pub fn head(&self) -> &Head {
        &self.head
    }
}
