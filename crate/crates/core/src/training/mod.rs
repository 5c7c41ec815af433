//! Two-stage training: stage 1 fits the generator with pixel and attention
//! losses, stage 2 alternates critic and generator updates.

mod checkpoint;
mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AdvMode, PixelMode, Stage};
use crate::nn::derive_seed;
use crate::tensor::Tensor;

pub use checkpoint::{
    read_history, read_manifest, CheckpointManifest, GlobalInit, LogRow, RngRecord, CHECKPOINT_FORMAT, RNG_SCHEME,
};
pub use trainer::{CriticLog, Progress, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_stage1: f64,
    pub lr_stage2_initial: f64,
    /// Stage-2 learning rate halves every this many epochs.
    pub lr_halving_period: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub input_noise_std: f64,
    pub seed: u64,
    pub use_attention: bool,
    pub use_gan: bool,
    pub use_perceptual: bool,
    pub adv_mode: AdvMode,
    pub pretrained_global: bool,
    pub pixel_mode: PixelMode,
    pub critic_steps_per_gen_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 10,
            stage2_epochs: 30,
            lr_stage1: 2e-4,
            lr_stage2_initial: 1e-4,
            lr_halving_period: 10,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            input_noise_std: 0.005,
            seed: 0,
            use_attention: true,
            use_gan: true,
            use_perceptual: true,
            adv_mode: AdvMode::Wgan,
            pretrained_global: true,
            pixel_mode: PixelMode::L1,
            critic_steps_per_gen_step: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.lr_halving_period == 0 {
            return fail("lr_halving_period must be at least 1".into());
        }
        if self.critic_steps_per_gen_step == 0 {
            return fail("critic_steps_per_gen_step must be at least 1".into());
        }
        for (name, v) in [("lr_stage1", self.lr_stage1), ("lr_stage2_initial", self.lr_stage2_initial)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.input_noise_std.is_finite() && self.input_noise_std >= 0.0) {
            return fail(format!("input_noise_std must be non-negative, got {}", self.input_noise_std));
        }
        Ok(())
    }

    pub fn epochs(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => self.stage1_epochs,
            Stage::Two => self.stage2_epochs,
        }
    }

    /// Learning rate for `epoch` (counted within the stage).
    pub fn learning_rate(&self, stage: Stage, epoch: usize) -> f64 {
        match stage {
            Stage::One => self.lr_stage1,
            Stage::Two => {
                let halvings = (epoch / self.lr_halving_period).min(i32::MAX as usize) as i32;
                self.lr_stage2_initial * 0.5f64.powi(halvings)
            }
        }
    }
}

/// Learning rate under the default schedule: constant 2e-4 in stage 1,
/// 1e-4 halved every 10 epochs in stage 2.
pub fn lr_schedule(stage: u8, epoch: usize) -> Result<f64> {
    Ok(TrainConfig::default().learning_rate(Stage::from_number(stage)?, epoch))
}

/// `x + ε` with `ε ~ N(0, std²)` elementwise from a stream seeded by `seed`.
pub fn add_input_noise(x: &Tensor, std: f64, seed: u64) -> Result<Tensor> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std must be non-negative, got {std}")));
    }
    if std == 0.0 {
        return Ok(x.clone());
    }
    let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..x.numel()).map(|_| dist.sample(&mut rng)).collect();
    x.add(&Tensor::new(noise, x.shape())?)
}

/// Sample order of one epoch, a pure function of (seed, stage, epoch).
pub fn epoch_order(seed: u64, stage: Stage, epoch: usize, len: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("order/{}/{epoch}", stage.number())));
    order.shuffle(&mut rng);
    order
}
