//! Run configuration: one TOML document covering the model, losses,
//! training schedule, data and output locations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::{AdvMode, LossWeights, PixelMode};
use crate::perceptual::PerceptualConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub color_dir: Option<PathBuf>,
    pub saliency_dir: Option<PathBuf>,
    pub split: String,
    /// Only `bilinear` is supported.
    pub resize_filter: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            color_dir: None,
            saliency_dir: None,
            split: "train".into(),
            resize_filter: "bilinear".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/scgan") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub perceptual: PerceptualConfig,
    pub losses: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Desk-scale setup for synthetic data: quarter width, 64×64 images,
    /// 500 stage-1 and 200 stage-2 epochs (one step each with 8 samples),
    /// stage-2 learning rate halved every 50 epochs.
    pub fn toy() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.generator.input_size = 64;
        cfg.generator.width_multiplier = 0.25;
        cfg.generator.global_feature_channels = 32;
        cfg.critic.width_multiplier = 0.25;
        cfg.perceptual.width_multiplier = 0.25;
        cfg.train.stage1_epochs = 500;
        cfg.train.stage2_epochs = 200;
        cfg.train.lr_halving_period = 50;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.critic.validate()?;
        self.losses.validate()?;
        self.train.validate()?;
        if self.critic.in_channels != 3 {
            return Err(Error::Config(format!(
                "critics judge RGB images, critic.in_channels must be 3, got {}",
                self.critic.in_channels
            )));
        }
        if self.data.resize_filter != "bilinear" {
            return Err(Error::Config(format!(
                "unsupported resize_filter `{}`; only `bilinear` is available",
                self.data.resize_filter
            )));
        }
        Ok(())
    }

    /// SHA-256 over everything that shapes the model or a training step.
    /// Epoch counts and filesystem locations are left out so a run can be
    /// extended or moved without invalidating its checkpoints.
    pub fn model_hash(&self) -> String {
        let mut pruned = self.clone();
        pruned.train.stage1_epochs = 0;
        pruned.train.stage2_epochs = 0;
        pruned.generator.global_weights = None;
        pruned.perceptual.weights = None;
        pruned.data = DataConfig::default();
        pruned.output = OutputConfig::default();
        let json = serde_json::to_vec(&pruned).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The seven component ablations, numbered 1-7.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationSetting {
    /// No attention loss and no attention critic.
    NoAttention = 1,
    NoGan = 2,
    NoPerceptual = 3,
    Lsgan = 4,
    RandomGlobalInit = 5,
    NoGlobalEncoder = 6,
    L2Pixel = 7,
}

impl AblationSetting {
    pub const ALL: [AblationSetting; 7] = [
        AblationSetting::NoAttention,
        AblationSetting::NoGan,
        AblationSetting::NoPerceptual,
        AblationSetting::Lsgan,
        AblationSetting::RandomGlobalInit,
        AblationSetting::NoGlobalEncoder,
        AblationSetting::L2Pixel,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Result<AblationSetting> {
        AblationSetting::ALL
            .get(usize::from(n).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("ablation setting must be 1-7, got {n}")))
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        match self {
            AblationSetting::NoAttention => t.use_attention = false,
            AblationSetting::NoGan => t.use_gan = false,
            AblationSetting::NoPerceptual => t.use_perceptual = false,
            AblationSetting::Lsgan => t.adv_mode = AdvMode::Lsgan,
            AblationSetting::RandomGlobalInit => t.pretrained_global = false,
            AblationSetting::NoGlobalEncoder => cfg.generator.use_global_encoder = false,
            AblationSetting::L2Pixel => t.pixel_mode = PixelMode::L2,
        }
    }
}

impl fmt::Display for AblationSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            AblationSetting::NoAttention => "w/o attention loss",
            AblationSetting::NoGan => "w/o GAN loss",
            AblationSetting::NoPerceptual => "w/o perceptual loss",
            AblationSetting::Lsgan => "LSGAN instead of WGAN-GP",
            AblationSetting::RandomGlobalInit => "global encoder randomly initialized",
            AblationSetting::NoGlobalEncoder => "w/o global encoder",
            AblationSetting::L2Pixel => "L2 pixel loss",
        };
        write!(f, "{} ({label})", self.number())
    }
}

impl FromStr for AblationSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<AblationSetting> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("ablation setting must be 1-7, got `{s}`")))?;
        AblationSetting::from_number(n)
    }
}
