//! Network specifications, construction and the shared forward contract.

pub mod fpsnet;
pub mod mrrn;
pub mod unet;
pub mod unetpp;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, io_err, json_err};
use crate::layers::{Head, Mode, sigmoid};
use crate::params::ParamStore;

pub use fpsnet::{Detection, FpsRaw};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Architecture {
    Unet,
    Unetpp,
    Resunet,
    Mrrn,
    MrrnDs,
    Fpsnet,
    FpsnetSl,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::Unet,
        Architecture::Unetpp,
        Architecture::Resunet,
        Architecture::Mrrn,
        Architecture::MrrnDs,
        Architecture::Fpsnet,
        Architecture::FpsnetSl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Unet => "UNET",
            Architecture::Unetpp => "UNETPP",
            Architecture::Resunet => "RESUNET",
            Architecture::Mrrn => "MRRN",
            Architecture::MrrnDs => "MRRN_DS",
            Architecture::Fpsnet => "FPSNET",
            Architecture::FpsnetSl => "FPSNET_SL",
        }
    }

    pub fn is_mrrn(self) -> bool {
        matches!(self, Architecture::Mrrn | Architecture::MrrnDs)
    }

    pub fn is_fps(self) -> bool {
        matches!(self, Architecture::Fpsnet | Architecture::FpsnetSl)
    }

    /// FPSNET_SL trains on bilinearly smoothed labels; everything else on binary ones.
    pub fn smoothed_labels(self) -> bool {
        self == Architecture::FpsnetSl
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace("++", "PP").replace('-', "_");
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ablation {
    #[default]
    None,
    DropFullresStream,
    KeepOnlyFullresStream,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backbone {
    Pretrained,
    #[default]
    Random,
}

/// How Unet++ turns its nested heads into the main prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadAggregation {
    #[default]
    LastHead,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub in_channels: usize,
    pub num_levels: usize,
    pub base_width: usize,
    /// Deep-supervision tap for MRRN_DS, 1 = penultimate block.
    pub supervision_level: usize,
    pub ablation: Ablation,
    pub backbone: Backbone,
    /// Safetensors file with torchvision-named ResNet-50 weights.
    pub pretrained_path: Option<PathBuf>,
    pub freeze_backbone: bool,
    pub head_aggregation: HeadAggregation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::new(Architecture::MrrnDs)
    }
}

/// Full-resolution widths chosen so the default parameter counts land near
/// the reference sizes (Unet 13M, Unet++ 9M, Res-Unet 32M, MRRN 39M).
pub fn default_base_width(arch: Architecture) -> usize {
    match arch {
        Architecture::Unet => 40,
        Architecture::Unetpp => 32,
        Architecture::Resunet => 64,
        Architecture::Mrrn | Architecture::MrrnDs => 32,
        Architecture::Fpsnet | Architecture::FpsnetSl => 64,
    }
}

impl NetworkSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            in_channels: if architecture.is_fps() { 3 } else { 5 },
            num_levels: 4,
            base_width: default_base_width(architecture),
            supervision_level: 1,
            ablation: Ablation::None,
            backbone: if architecture.is_fps() { Backbone::Pretrained } else { Backbone::Random },
            pretrained_path: None,
            freeze_backbone: false,
            head_aggregation: HeadAggregation::LastHead,
        }
    }

    pub fn with_base_width(mut self, w: usize) -> Self {
        self.base_width = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.in_channels == 0 || self.in_channels % 2 == 0 {
            return bad(format!("in_channels must be odd, got {}", self.in_channels));
        }
        if !(1..=5).contains(&self.num_levels) {
            return bad(format!("num_levels must be in 1..=5, got {}", self.num_levels));
        }
        if self.base_width == 0 {
            return bad("base_width must be positive".into());
        }
        if !(1..=self.num_levels).contains(&self.supervision_level) {
            return bad(format!("supervision_level {} outside 1..={}", self.supervision_level, self.num_levels));
        }
        if self.ablation != Ablation::None && !self.architecture.is_mrrn() {
            return bad(format!("stream ablation is only defined for MRRN, not {}", self.architecture));
        }
        if self.architecture.is_fps() && self.num_levels != 4 {
            return bad("FPSnet uses the fixed ResNet-50 pyramid; num_levels must be 4".into());
        }
        Ok(())
    }

    /// Channel widths per resolution level, doubling from `base_width`.
    pub fn widths(&self) -> Vec<usize> {
        (0..=self.num_levels).map(|l| self.base_width << l).collect()
    }

    /// In-plane sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        if self.architecture.is_fps() { 64 } else { 1 << self.num_levels }
    }

    pub fn hash(&self) -> String {
        dilseg_core::hashing::config_hash(self)
    }
}

/// Returns a copy of an MRRN spec with the stream ablation applied.
pub fn apply_ablation(spec: &NetworkSpec, ablation: Ablation) -> Result<NetworkSpec> {
    if ablation != Ablation::None && !spec.architecture.is_mrrn() {
        return Err(Error::InvalidSpec(format!("stream ablation is only defined for MRRN, not {}", spec.architecture)));
    }
    let mut out = spec.clone();
    out.ablation = ablation;
    out.validate()?;
    Ok(out)
}

pub struct ForwardOutput {
    /// Foreground probabilities, (N, 1, H, W).
    pub main: Tensor,
    /// Auxiliary probability maps: the deep-supervision head for MRRN_DS,
    /// every nested head (shallowest first) for Unet++.
    pub aux: Vec<Tensor>,
    /// FPSnet detections per image (eval mode only).
    pub detections: Option<Vec<Vec<Detection>>>,
    /// FPSnet intermediate outputs needed by the detection loss.
    pub fps: Option<FpsRaw>,
}

enum Model {
    EncDec(unet::EncoderDecoder),
    Nested(unetpp::UnetPlusPlus),
    Mrrn(mrrn::Mrrn),
    Fps(fpsnet::FpsNet),
}

pub struct Network {
    spec: NetworkSpec,
    params: ParamStore,
    model: Model,
}

/// Builds a network with seeded random weights. FPSnet with a PRETRAINED
/// backbone loads `pretrained_path` when it exists and otherwise falls back
/// to random initialisation with a warning.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut params = ParamStore::new(seed);
    let widths = spec.widths();
    let model = {
        let mut root = params.root();
        match spec.architecture {
            Architecture::Unet => Model::EncDec(unet::EncoderDecoder::unet(&mut root, spec.in_channels, &widths)?),
            Architecture::Resunet => {
                Model::EncDec(unet::EncoderDecoder::resunet(&mut root, spec.in_channels, &widths)?)
            }
            Architecture::Unetpp => Model::Nested(unetpp::UnetPlusPlus::new(&mut root, spec.in_channels, &widths)?),
            Architecture::Mrrn | Architecture::MrrnDs => {
                let level = (spec.architecture == Architecture::MrrnDs).then_some(spec.supervision_level);
                Model::Mrrn(mrrn::Mrrn::new(&mut root, spec.in_channels, &widths, spec.ablation, level)?)
            }
            Architecture::Fpsnet | Architecture::FpsnetSl => Model::Fps(fpsnet::FpsNet::new(
                &mut root,
                spec.in_channels,
                spec.base_width,
                spec.freeze_backbone,
            )?),
        }
    };
    let net = Network { spec: spec.clone(), params, model };
    if spec.architecture.is_fps() && spec.backbone == Backbone::Pretrained {
        match &spec.pretrained_path {
            Some(p) if p.exists() => {
                let n = net.params.load_prefixed(p, "backbone.", false)?;
                log::info!("loaded {n} pretrained backbone tensors from {}", p.display());
            }
            _ => log::warn!("pretrained backbone weights unavailable; using random initialisation"),
        }
    }
    Ok(net)
}

/// Trainable scalar count.
pub fn count_parameters(net: &Network) -> usize {
    net.params.count_trainable()
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = x.dims4().map_err(|_| Error::ShapeMismatch(format!("expected (N, C, H, W), got {:?}", x.dims())))?;
        if c != self.spec.in_channels {
            return Err(Error::ShapeMismatch(format!("{} expects {} channels, got {c}", self.spec.architecture, self.spec.in_channels)));
        }
        let m = self.spec.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::ShapeMismatch(format!("in-plane size {h}x{w} must be a positive multiple of {m}")));
        }
        if x.dtype() != DType::F32 {
            return Err(Error::ShapeMismatch("input must be f32".into()));
        }
        Ok((n, h, w))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        let (_, h, w) = self.check_input(x)?;
        let out = match &self.model {
            Model::EncDec(m) => ForwardOutput { main: sigmoid(&m.logits(x, mode)?)?, aux: vec![], detections: None, fps: None },
            Model::Nested(m) => {
                let heads = m.head_logits(x, mode)?.iter().map(sigmoid).collect::<Result<Vec<_>>>()?;
                let main = match self.spec.head_aggregation {
                    HeadAggregation::LastHead => heads.last().expect("at least one head").clone(),
                    HeadAggregation::Mean => (Tensor::stack(&heads, 0)?.mean(0))?,
                };
                ForwardOutput { main, aux: heads, detections: None, fps: None }
            }
            Model::Mrrn(m) => {
                let (main, aux) = m.logits(x, mode)?;
                let aux = aux.map(|a| sigmoid(&a)).transpose()?.into_iter().collect();
                ForwardOutput { main: sigmoid(&main)?, aux, detections: None, fps: None }
            }
            Model::Fps(m) => {
                let raw = m.forward_raw(x, mode)?;
                let seg = crate::kernels::avg_pool(&raw.seg_full, fpsnet::SCALE)?;
                if mode == Mode::Eval {
                    let dets = fpsnet::postprocess(&raw, h, w)?;
                    let main = (seg * fpsnet::box_mask(&dets, h, w)?)?;
                    ForwardOutput { main, aux: vec![], detections: Some(dets), fps: Some(raw) }
                } else {
                    ForwardOutput { main: seg, aux: vec![], detections: None, fps: Some(raw) }
                }
            }
        };
        Ok(out)
    }

    /// Heads producing the main prediction (all nested heads for Unet++).
    fn main_heads(&self) -> Vec<&Head> {
        match &self.model {
            Model::EncDec(m) => vec![m.head()],
            Model::Nested(m) => m.heads().iter().collect(),
            Model::Mrrn(m) => vec![m.head()],
            Model::Fps(m) => vec![m.seg_head()],
        }
    }

    /// Zeroes the final prediction head(s) so every main logit is 0.
    pub fn zero_main_head(&self) -> Result<()> {
        for head in self.main_heads() {
            let conv = head.conv();
            conv.weight().set(&conv.weight().zeros_like()?)?;
            if let Some(b) = conv.bias() {
                b.set(&b.zeros_like()?)?;
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        self.params.save(path)?;
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_FORMAT,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            spec_hash: self.spec.hash(),
            spec: self.spec.clone(),
        };
        let meta_path = meta_path(path);
        let text = serde_json::to_string_pretty(&meta).map_err(json_err(&meta_path))?;
        std::fs::write(&meta_path, text).map_err(io_err(&meta_path))
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub toolkit_version: String,
    pub spec_hash: String,
    pub spec: NetworkSpec,
}

/// Metadata sidecar path for a weight file: `model.safetensors` → `model.json`.
pub fn meta_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn read_checkpoint_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let mp = meta_path(path.as_ref());
    let text = std::fs::read_to_string(&mp).map_err(io_err(&mp))?;
    serde_json::from_str(&text).map_err(json_err(&mp))
}

/// Rebuilds the network from a checkpoint's spec and loads its weights.
/// `expected_hash`, when given, must match the stored spec hash.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<Network> {
    let path = path.as_ref();
    let meta = read_checkpoint_meta(path)?;
    let ck = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
    if meta.format_version != CHECKPOINT_FORMAT {
        return Err(ck(format!("unsupported format version {}", meta.format_version)));
    }
    if meta.spec.hash() != meta.spec_hash {
        return Err(ck("stored spec does not match its hash".into()));
    }
    if let Some(h) = expected_hash.filter(|h| *h != meta.spec_hash) {
        return Err(ck(format!("spec hash {} does not match expected {h}", meta.spec_hash)));
    }
    // the weights come from the checkpoint, not from a backbone file
    let mut spec = meta.spec.clone();
    spec.backbone = Backbone::Random;
    let mut net = build_network(&spec, 0)?;
    net.params.load(path, true)?;
    net.spec = meta.spec;
    Ok(net)
}

/// Convenience: a (N, C, H, W) f32 tensor from a flat buffer.
pub fn batch_tensor(data: Vec<f32>, n: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, (n, c, h, w), &Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert_eq!("unet++".parse::<Architecture>().unwrap(), Architecture::Unetpp);
        assert_eq!("mrrn-ds".parse::<Architecture>().unwrap(), Architecture::MrrnDs);
        assert!("vnet".parse::<Architecture>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = NetworkSpec::new(Architecture::MrrnDs);
        assert!(s.validate().is_ok());
        s.in_channels = 4;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::new(Architecture::MrrnDs);
        s.supervision_level = 5;
        assert!(s.validate().is_err());
        s.supervision_level = 0;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::new(Architecture::Unet);
        s.ablation = Ablation::DropFullresStream;
        assert!(s.validate().is_err());
    }

    #[test]
    fn ablation_requires_mrrn() {
        let unet = NetworkSpec::new(Architecture::Unet);
        assert!(apply_ablation(&unet, Ablation::DropFullresStream).is_err());
        assert_eq!(apply_ablation(&unet, Ablation::None).unwrap(), unet);
        let mrrn = NetworkSpec::new(Architecture::Mrrn);
        let a = apply_ablation(&mrrn, Ablation::KeepOnlyFullresStream).unwrap();
        assert_eq!(a.ablation, Ablation::KeepOnlyFullresStream);
        assert_eq!(apply_ablation(&mrrn, Ablation::None).unwrap(), mrrn);
    }

    #[test]
    fn spec_hash_ignores_nothing_relevant() {
        let a = NetworkSpec::new(Architecture::Mrrn);
        let b = a.clone().with_base_width(16);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), NetworkSpec::new(Architecture::Mrrn).hash());
    }
}
