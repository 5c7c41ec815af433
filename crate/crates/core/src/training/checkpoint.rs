//! Checkpoint directory: weight and optimizer archives, `manifest.json`
//! and the `losses.csv` history.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{Progress, Trainer};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, Stage};
use crate::nn::{load_state, Adam, AdamConfig};
use crate::weights;

pub const CHECKPOINT_FORMAT: u32 = 1;
/// Every random draw is a fresh ChaCha8 stream seeded from the run seed and
/// a label, so the seed alone is the complete generator state.
pub const RNG_SCHEME: &str = "chacha8(derive_seed(seed, label)); labels order/{stage}/{epoch}, noise/{step}, gp_c/{step}/{k}, gp_a/{step}/{k}";

const MANIFEST: &str = "manifest.json";
const LOSSES: &str = "losses.csv";
const GENERATOR: &str = "generator.safetensors";
const CRITIC_COLOR: &str = "critic_color.safetensors";
const CRITIC_ATTENTION: &str = "critic_attention.safetensors";
const OPTIM_GENERATOR: &str = "optim_generator.safetensors";
const OPTIM_CRITIC_COLOR: &str = "optim_critic_color.safetensors";
const OPTIM_CRITIC_ATTENTION: &str = "optim_critic_attention.safetensors";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalInit {
    Pretrained,
    Random,
    /// The generator has no global encoder.
    Absent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: u64,
    pub scheme: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub stage: u8,
    /// Completed epochs of `stage` when `step_in_epoch` is 0.
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: u64,
    pub config_hash: String,
    pub rng: RngRecord,
    pub global_init: GlobalInit,
    pub config: RunConfig,
}

/// One row of `losses.csv`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub l1: f64,
    pub attention: f64,
    pub adv_g: f64,
    pub perceptual: f64,
    pub total: f64,
    pub adv_d: f64,
    pub gp_c: f64,
    pub gp_a: f64,
    pub lr: f64,
}

impl LogRow {
    pub fn new(step: u64, losses: &LossBreakdown, lr: f64) -> LogRow {
        LogRow {
            step,
            l1: losses.l1,
            attention: losses.attention,
            adv_g: losses.adv_g,
            perceptual: losses.perceptual,
            total: losses.total,
            adv_d: losses.adv_d,
            gp_c: losses.gp_c,
            gp_a: losses.gp_a,
            lr,
        }
    }

    pub fn losses(&self) -> LossBreakdown {
        LossBreakdown {
            l1: self.l1,
            attention: self.attention,
            adv_g: self.adv_g,
            perceptual: self.perceptual,
            total: self.total,
            adv_d: self.adv_d,
            gp_c: self.gp_c,
            gp_a: self.gp_a,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {}",
            path.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

pub fn read_history(dir: &Path) -> Result<Vec<LogRow>> {
    let path = dir.join(LOSSES);
    let mut reader = csv::Reader::from_path(&path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
    Ok(rows)
}

fn write_history(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        writer.write_record([
            "step",
            "l1",
            "attention",
            "adv_g",
            "perceptual",
            "total",
            "adv_d",
            "gp_c",
            "gp_a",
            "lr",
        ])?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn load_optimizer(path: &Path, config: AdamConfig) -> Result<Adam> {
    let (arrays, _) = weights::load_arrays(path)?;
    let mut adam = Adam::new(config);
    adam.load_state_arrays(&arrays)?;
    Ok(adam)
}

impl Trainer {
    /// Writes the complete training state into `dir`, creating it if needed.
    /// The manifest is written last, so a directory with a manifest holds a
    /// complete checkpoint.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST);
        if manifest_path.exists() {
            fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        }
        weights::save_module(&dir.join(GENERATOR), &self.generator)?;
        weights::save_module(&dir.join(CRITIC_COLOR), &self.critic_color)?;
        weights::save_module(&dir.join(CRITIC_ATTENTION), &self.critic_attention)?;
        weights::save_arrays(&dir.join(OPTIM_GENERATOR), &self.opt_g.state_arrays(), None)?;
        weights::save_arrays(&dir.join(OPTIM_CRITIC_COLOR), &self.opt_c.state_arrays(), None)?;
        weights::save_arrays(&dir.join(OPTIM_CRITIC_ATTENTION), &self.opt_a.state_arrays(), None)?;
        write_history(&dir.join(LOSSES), &self.history)?;

        let p = self.progress;
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT,
            stage: p.stage.number(),
            epoch: p.epoch,
            step_in_epoch: p.step_in_epoch,
            global_step: p.global_step,
            config_hash: self.config.model_hash(),
            rng: RngRecord {
                seed: self.config.train.seed,
                scheme: RNG_SCHEME.to_string(),
            },
            global_init: self.global_init,
            config: self.config.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
    }

    /// Restores a trainer from `dir`. `config` must hash to the value
    /// recorded in the manifest; only epoch counts and paths may differ.
    pub fn from_checkpoint(config: RunConfig, dir: &Path) -> Result<Trainer> {
        let manifest = read_manifest(dir)?;
        let hash = config.model_hash();
        if hash != manifest.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash {hash} does not match checkpoint {} (hash {}); \
                 model, loss and training settings must be identical to resume",
                dir.display(),
                manifest.config_hash
            )));
        }
        let mut trainer = Trainer::build(config, manifest.global_init)?;
        trainer.generator.load(&dir.join(GENERATOR))?;
        trainer.critic_color.load(&dir.join(CRITIC_COLOR))?;
        trainer.critic_attention.load(&dir.join(CRITIC_ATTENTION))?;
        let adam = trainer.opt_g.config();
        trainer.opt_g = load_optimizer(&dir.join(OPTIM_GENERATOR), adam)?;
        trainer.opt_c = load_optimizer(&dir.join(OPTIM_CRITIC_COLOR), adam)?;
        trainer.opt_a = load_optimizer(&dir.join(OPTIM_CRITIC_ATTENTION), adam)?;
        trainer.history = read_history(dir)?;
        trainer.progress = Progress {
            stage: Stage::from_number(manifest.stage)?,
            epoch: manifest.epoch,
            step_in_epoch: manifest.step_in_epoch,
            global_step: manifest.global_step,
        };
        Ok(trainer)
    }

    /// Loads only the generator weights of a checkpoint, for inference.
    pub fn load_generator(dir: &Path) -> Result<(RunConfig, crate::generator::Generator)> {
        let manifest = read_manifest(dir)?;
        let mut generator = crate::generator::Generator::new(&manifest.config.generator, 0)?;
        let (arrays, _) = weights::load_arrays(&dir.join(GENERATOR))?;
        load_state(&mut generator, &arrays)?;
        Ok((manifest.config, generator))
    }
}
