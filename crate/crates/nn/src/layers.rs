//! Building blocks shared by the architectures.

use candle_core::{Device, Tensor, Var};

use crate::error::Result;
use crate::kernels;
use crate::params::{ParamKind, Scope};

/// Whether a forward pass records gradients and updates batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn tensor_for(v: &Var, mode: Mode, trainable: bool) -> Tensor {
    if mode == Mode::Train && trainable { v.as_tensor().clone() } else { v.as_tensor().detach() }
}

pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
    trainable: bool,
}

impl Conv2d {
    /// Kaiming-normal weights (fan-in, ReLU gain) and zero bias.
    pub fn new(s: &mut Scope, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Result<Self> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self::with_init(s, cin, cout, k, stride, pad, bias, std, 0.0)
    }

    /// Same-padded stride-1 convolution with bias.
    pub fn same(s: &mut Scope, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::new(s, cin, cout, k, 1, k / 2, true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        s: &mut Scope,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        std: f64,
        bias_value: f32,
    ) -> Result<Self> {
        let weight = s.normal("weight", &[cout, cin, k, k], std)?;
        let bias = if bias { Some(s.constant("bias", &[cout], bias_value, ParamKind::Bias)?) } else { None };
        Ok(Self { weight, bias, stride, pad, trainable: s.is_trainable() })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = tensor_for(&self.weight, mode, self.trainable);
        let y = kernels::conv2d(x, &w, self.stride, self.pad)?;
        match &self.bias {
            Some(b) => {
                let b = tensor_for(b, mode, self.trainable);
                let c = b.elem_count();
                Ok(y.broadcast_add(&b.reshape((1, c, 1, 1))?)?)
            }
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

pub const BN_MOMENTUM: f32 = 0.1;

pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    trainable: bool,
}

impl BatchNorm2d {
    pub fn new(s: &mut Scope, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: s.constant("weight", &[c], 1.0, ParamKind::Weight)?,
            beta: s.constant("bias", &[c], 0.0, ParamKind::Bias)?,
            running_mean: s.constant("running_mean", &[c], 0.0, ParamKind::Buffer)?,
            running_var: s.constant("running_var", &[c], 1.0, ParamKind::Buffer)?,
            trainable: s.is_trainable(),
        })
    }

    /// Training mode normalises with batch statistics and updates the running
    /// averages; eval mode (and frozen layers) use the running averages.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Train && self.trainable {
            let (y, stats) = kernels::batch_norm_train(x, &self.gamma, &self.beta)?;
            let blend = |var: &Var, batch: &[f32]| -> Result<()> {
                let old: Vec<f32> = var.to_vec1()?;
                let new: Vec<f32> =
                    old.iter().zip(batch).map(|(o, b)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * b).collect();
                var.set(&Tensor::from_vec(new, old.len(), &Device::Cpu)?)?;
                Ok(())
            };
            blend(&self.running_mean, &stats.mean)?;
            blend(&self.running_var, &stats.var)?;
            Ok(y)
        } else {
            let y = kernels::batch_norm_eval(
                x,
                &self.gamma.to_vec1::<f32>()?,
                &self.beta.to_vec1::<f32>()?,
                &self.running_mean.to_vec1::<f32>()?,
                &self.running_var.to_vec1::<f32>()?,
            )?;
            Ok(y)
        }
    }
}

/// conv (no bias) → batch norm → ReLU.
pub struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(s: &mut Scope, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(Self { conv: Conv2d::new(&mut s.pp("conv"), cin, cout, k, 1, k / 2, false)?, bn: BatchNorm2d::new(&mut s.pp("bn"), cout)? })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x, mode)?, mode)?.relu()?)
    }
}

/// Two stacked 3×3 conv-BN-ReLU layers.
pub struct DoubleConv {
    a: ConvBnRelu,
    b: ConvBnRelu,
}

impl DoubleConv {
    pub fn new(s: &mut Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self { a: ConvBnRelu::new(&mut s.pp("0"), cin, cout, 3)?, b: ConvBnRelu::new(&mut s.pp("1"), cout, cout, 3)? })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.b.forward(&self.a.forward(x, mode)?, mode)
    }
}

/// 1×1 convolution to a single logit channel.
pub struct Head(Conv2d);

impl Head {
    pub fn new(s: &mut Scope, cin: usize) -> Result<Self> {
        Ok(Self(Conv2d::new(s, cin, 1, 1, 1, 0, true)?))
    }

    pub fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.0.forward(x, mode)
    }

    pub fn conv(&self) -> &Conv2d {
        &self.0
    }
}

pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    Ok(Tensor::cat(parts, 1)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::DType;

    #[test]
    fn single_conv_parameter_count() {
        let mut store = ParamStore::new(0);
        Conv2d::same(&mut store.root().pp("c"), 1, 1, 3).unwrap();
        assert_eq!(store.count_trainable(), 10);
    }

    #[test]
    fn batch_norm_updates_running_stats_only_in_training() {
        let mut store = ParamStore::new(0);
        let bn = BatchNorm2d::new(&mut store.root().pp("bn"), 2).unwrap();
        let x = (Tensor::ones((2, 2, 3, 3), DType::F32, &Device::Cpu).unwrap() * 5.0).unwrap();
        bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(store.get("bn.running_mean").unwrap().to_vec1::<f32>().unwrap(), vec![0.0, 0.0]);
        bn.forward(&x, Mode::Train).unwrap();
        let rm = store.get("bn.running_mean").unwrap().to_vec1::<f32>().unwrap();
        assert!((rm[0] - 0.5).abs() < 1e-6);
        let rv = store.get("bn.running_var").unwrap().to_vec1::<f32>().unwrap();
        assert!((rv[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn eval_mode_builds_no_graph() {
        let mut store = ParamStore::new(0);
        let c = Conv2d::same(&mut store.root(), 2, 3, 3).unwrap();
        let x = Tensor::ones((1, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(!c.forward(&x, Mode::Eval).unwrap().track_op());
        assert!(c.forward(&x, Mode::Train).unwrap().track_op());
    }
}
