//! Unet++: nested dense skip pathways with a prediction head on every
//! full-resolution nested node.

use candle_core::Tensor;

use crate::error::Result;
use crate::kernels;
use crate::layers::{DoubleConv, Head, Mode};
use crate::params::Scope;

pub struct UnetPlusPlus {
    /// `nodes[i][j]` is X^{i,j}; column 0 is the backbone encoder.
    nodes: Vec<Vec<DoubleConv>>,
    heads: Vec<Head>,
}

impl UnetPlusPlus {
    pub fn new(s: &mut Scope, in_ch: usize, widths: &[usize]) -> Result<Self> {
        let levels = widths.len() - 1;
        let mut nodes = Vec::with_capacity(levels + 1);
        for i in 0..=levels {
            let mut row = Vec::with_capacity(levels + 1 - i);
            for j in 0..=(levels - i) {
                let cin = if j == 0 {
                    if i == 0 { in_ch } else { widths[i - 1] }
                } else {
                    j * widths[i] + widths[i + 1]
                };
                row.push(DoubleConv::new(&mut s.pp(format!("x{i}_{j}")), cin, widths[i])?);
            }
            nodes.push(row);
        }
        let heads = (1..=levels)
            .map(|j| Head::new(&mut s.pp(format!("head{j}")), widths[0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nodes, heads })
    }

    /// Logits of every nested head, shallowest first.
    pub fn head_logits(&self, x: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let levels = self.nodes.len() - 1;
        let mut out: Vec<Vec<Tensor>> = vec![Vec::new(); levels + 1];
        let mut h = x.clone();
        for i in 0..=levels {
            if i > 0 {
                h = kernels::max_pool2d(&h, 2, 2, 0)?;
            }
            h = self.nodes[i][0].forward(&h, mode)?;
            out[i].push(h.clone());
            // fill the anti-diagonal ending at the new encoder node
            for j in 1..=i {
                let r = i - j;
                let up = kernels::upsample(&out[r + 1][j - 1], 2)?;
                let mut parts: Vec<&Tensor> = out[r].iter().collect();
                parts.push(&up);
                let node = self.nodes[r][j].forward(&Tensor::cat(&parts, 1)?, mode)?;
                out[r].push(node);
            }
        }
        self.heads.iter().enumerate().map(|(j, head)| head.logits(&out[0][j + 1], mode)).collect()
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }
}
