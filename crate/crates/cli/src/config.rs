//! Experiment configuration.
//!
//! One JSON document describes an entire run. Its hash names the output
//! directory and is stamped into every artifact. The output directory itself
//! is not part of the hash, so the same experiment written to two places
//! carries the same identity.

use std::path::{Path, PathBuf};

use dilseg_core::evaluation::EvalOptions;
use dilseg_core::hashing::config_hash;
use dilseg_core::phantom::PhantomConfig;
use dilseg_core::preprocess::PreprocessConfig;
use dilseg_nn::config::TrainConfig;
use dilseg_nn::networks::{Ablation, Architecture, Backbone, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming a directory searched for pretrained weights.
pub const CACHE_ENV: &str = "DILSEG_CACHE_DIR";
/// File looked up in the cache directory for the FPSnet backbone.
pub const BACKBONE_FILE: &str = "resnet50.safetensors";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Axes swept by the `ablate` command. Empty axes are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub supervision_levels: Vec<usize>,
    pub mu: Vec<f64>,
    pub stream_ablations: Vec<Ablation>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            supervision_levels: vec![1, 2, 3, 4],
            mu: vec![0.5, 0.75, 0.95],
            stream_ablations: vec![Ablation::DropFullresStream, Ablation::KeepOnlyFullresStream],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Model name used in reports; defaults to the architecture name.
    pub name: Option<String>,
    pub seed: u64,
    /// Raw-data manifest. Without one, commands use the run's phantom dataset.
    pub manifest: Option<PathBuf>,
    pub phantom: PhantomConfig,
    pub phantom_cases: usize,
    pub preprocess: PreprocessConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub evaluation: EvalOptions,
    pub ablation: AblationGrid,
    /// Root for run directories; not hashed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            seed: 0,
            manifest: None,
            phantom: PhantomConfig::default(),
            phantom_cases: 8,
            preprocess: PreprocessConfig::default(),
            network: NetworkSpec::new(Architecture::MrrnDs),
            train: TrainConfig::default(),
            evaluation: EvalOptions::default(),
            ablation: AblationGrid::default(),
            output_dir: None,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub arch: Option<Architecture>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides, propagates the top-level seed into every component
    /// and validates the result.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
        if let Some(arch) = o.arch {
            self.network = switch_architecture(&self.network, arch);
        }
        self.train.seed = self.seed;
        self.phantom.seed = self.seed;
        if self.network.architecture.is_fps()
            && self.network.backbone == Backbone::Pretrained
            && self.network.pretrained_path.is_none()
        {
            if let Some(dir) = std::env::var_os(CACHE_ENV) {
                self.network.pretrained_path = Some(PathBuf::from(dir).join(BACKBONE_FILE));
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.preprocess.validate()?;
        if self.manifest.is_none() {
            self.phantom.validate()?;
            if self.phantom_cases == 0 {
                return Err(CliError::Config("phantom_cases must be positive".into()));
            }
        }
        let crop = self.preprocess.crop_size;
        let m = self.network.size_multiple();
        if crop[0] % m != 0 || crop[1] % m != 0 {
            return Err(CliError::Config(format!(
                "crop size {}x{} is not a multiple of {m} required by {}",
                crop[0], crop[1], self.network.architecture
            )));
        }
        Ok(())
    }

    /// Digest of the canonical config without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        config_hash(&c)
    }

    pub fn model_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.network.architecture.name().to_string())
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(self.hash())
    }

    pub fn to_pretty_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_string_pretty(&c).expect("serializable config") + "\n"
    }
}

/// Spec for another architecture: channel count and backbone follow the new
/// architecture; widths, depth and the remaining options are kept.
pub fn switch_architecture(spec: &NetworkSpec, arch: Architecture) -> NetworkSpec {
    if spec.architecture == arch {
        return spec.clone();
    }
    let fresh = NetworkSpec::new(arch);
    NetworkSpec {
        architecture: arch,
        in_channels: fresh.in_channels,
        backbone: fresh.backbone,
        ablation: if arch.is_mrrn() { spec.ablation } else { Ablation::None },
        ..spec.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_dir_and_key_order() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output_dir: Some("/elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let text = a.to_pretty_json();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        // round trip through a reordered object
        let obj = v.as_object_mut().unwrap();
        let reversed: serde_json::Map<String, serde_json::Value> =
            obj.iter().rev().map(|(k, v)| (k.clone(), v.clone())).collect();
        let c: ExperimentConfig = serde_json::from_value(serde_json::Value::Object(reversed)).unwrap();
        assert_eq!(c.hash(), a.hash());
    }

    #[test]
    fn overrides_change_identity() {
        let base = ExperimentConfig::default().resolve(&Overrides::default()).unwrap();
        let seeded = ExperimentConfig::default().resolve(&Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_ne!(base.hash(), seeded.hash());
        assert_eq!(seeded.train.seed, 9);
        assert_eq!(seeded.phantom.seed, 9);
        let unet = ExperimentConfig::default()
            .resolve(&Overrides { arch: Some(Architecture::Unet), ..Default::default() })
            .unwrap();
        assert_eq!(unet.network.architecture, Architecture::Unet);
        assert_ne!(unet.hash(), base.hash());
    }

    #[test]
    fn switching_to_fps_sets_three_channels() {
        let s = switch_architecture(&NetworkSpec::new(Architecture::MrrnDs), Architecture::Fpsnet);
        assert_eq!(s.in_channels, 3);
        assert_eq!(s.backbone, Backbone::Pretrained);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 4, "train": {"lr": 0.001}}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.train.batch_size, 3);
        assert_eq!(c.phantom_cases, 8);
    }

    #[test]
    fn crop_must_fit_network() {
        let mut c = ExperimentConfig::default();
        c.preprocess.crop_size = [72, 72];
        assert!(c.resolve(&Overrides::default()).is_err());
    }
}
