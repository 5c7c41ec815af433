use std::path::PathBuf;

use log::{debug, error, info, warn};

use super::checkpoint::{GlobalInit, LogRow};
use super::{add_input_noise, epoch_order};
use crate::config::RunConfig;
use crate::critic::PatchCritic;
use crate::dataset::{collate, Batch, SampleSource};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorOutput};
use crate::losses::{
    attention_loss, combine_generator_loss, critic_loss, generator_adv_loss, gradient_penalty, perceptual_loss,
    pixel_loss, weighted, AdvMode, CriticScores, LossBreakdown, Stage,
};
use crate::nn::{derive_seed, set_frozen, Adam, AdamConfig, Mode};
use crate::perceptual::Vgg16Features;
use crate::tensor::{backward, no_grad, Tensor};

/// Position in the schedule. `epoch` counts completed epochs of `stage`
/// plus the one in progress when `step_in_epoch > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub stage: Stage,
    pub epoch: usize,
    pub step_in_epoch: usize,
    /// Generator updates performed so far, over both stages.
    pub global_step: u64,
}

/// Critic-side values of one critic update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticLog {
    pub adv_d: f64,
    pub gp_c: f64,
    pub gp_a: f64,
}

/// Owns the generator, both critics, their optimizers and the loss history.
pub struct Trainer {
    pub(super) config: RunConfig,
    pub(super) generator: Generator,
    pub(super) critic_color: PatchCritic,
    pub(super) critic_attention: PatchCritic,
    pub(super) extractor: Option<Vgg16Features>,
    pub(super) opt_g: Adam,
    pub(super) opt_c: Adam,
    pub(super) opt_a: Adam,
    pub(super) progress: Progress,
    pub(super) history: Vec<LogRow>,
    pub(super) global_init: GlobalInit,
}

impl Trainer {
    /// Fresh models from the configured seed. The global encoder is loaded
    /// from `generator.global_weights` when `train.pretrained_global` is set.
    pub fn new(config: RunConfig) -> Result<Trainer> {
        let global_init = if !config.generator.use_global_encoder {
            GlobalInit::Absent
        } else if !config.train.pretrained_global {
            GlobalInit::Random
        } else if config.generator.global_weights.is_some() {
            GlobalInit::Pretrained
        } else {
            warn!("pretrained_global is set but generator.global_weights is empty; global encoder starts random");
            GlobalInit::Random
        };
        let mut trainer = Trainer::build(config, global_init)?;
        if global_init == GlobalInit::Pretrained {
            let path = trainer.config.generator.global_weights.clone().expect("checked above");
            trainer.generator.load_global_encoder_weights(&path)?;
            info!("global encoder loaded from {}", path.display());
        }
        Ok(trainer)
    }

    pub(super) fn build(config: RunConfig, global_init: GlobalInit) -> Result<Trainer> {
        config.validate()?;
        let seed = config.train.seed;
        let generator = Generator::new(&config.generator, derive_seed(seed, "generator"))?;
        let critic_color = PatchCritic::new(&config.critic, derive_seed(seed, "critic_color"), "critic_color")?;
        let critic_attention =
            PatchCritic::new(&config.critic, derive_seed(seed, "critic_attention"), "critic_attention")?;
        let extractor = if config.train.use_perceptual {
            Some(Vgg16Features::new(&config.perceptual)?)
        } else {
            None
        };
        let adam = AdamConfig {
            beta1: config.train.adam_beta1,
            beta2: config.train.adam_beta2,
            eps: config.train.adam_eps,
        };
        Ok(Trainer {
            config,
            generator,
            critic_color,
            critic_attention,
            extractor,
            opt_g: Adam::new(adam),
            opt_c: Adam::new(adam),
            opt_a: Adam::new(adam),
            progress: Progress {
                stage: Stage::One,
                epoch: 0,
                step_in_epoch: 0,
                global_step: 0,
            },
            history: Vec::new(),
            global_init,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn critic_color(&self) -> &PatchCritic {
        &self.critic_color
    }

    pub fn critic_attention(&self) -> &PatchCritic {
        &self.critic_attention
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn history(&self) -> &[LogRow] {
        &self.history
    }

    pub fn global_init(&self) -> GlobalInit {
        self.global_init
    }

    /// Whether every epoch of `stage` has been run.
    pub fn stage_complete(&self, stage: Stage) -> bool {
        match (self.progress.stage, stage) {
            (Stage::Two, Stage::One) => true,
            (Stage::One, Stage::Two) => false,
            _ => self.progress.epoch >= self.config.train.epochs(stage),
        }
    }

    /// Runs the remaining epochs of `stage`, calling `on_epoch_end` after
    /// each one. Entering stage 2 from stage 1 restarts the epoch count.
    pub fn train_stage(
        &mut self,
        stage: Stage,
        source: &dyn SampleSource,
        on_epoch_end: &mut dyn FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        self.enter(stage)?;
        while !self.stage_complete(stage) {
            while self.step(stage, source)?.is_some() {}
            on_epoch_end(self)?;
        }
        Ok(())
    }

    /// Runs at most `steps` updates of `stage`, stopping early when the
    /// stage is complete. Epoch boundaries are crossed silently.
    pub fn train_steps(&mut self, stage: Stage, source: &dyn SampleSource, steps: usize) -> Result<Vec<LogRow>> {
        self.enter(stage)?;
        let mut rows = Vec::with_capacity(steps);
        while rows.len() < steps && !self.stage_complete(stage) {
            if let Some(row) = self.step(stage, source)? {
                rows.push(row);
            }
        }
        Ok(rows)
    }

    fn enter(&mut self, stage: Stage) -> Result<()> {
        match (self.progress.stage, stage) {
            (Stage::Two, Stage::One) => Err(Error::InvalidArgument(
                "trainer is already in stage 2; stage 1 cannot be resumed".into(),
            )),
            (Stage::One, Stage::Two) => {
                self.progress = Progress {
                    stage: Stage::Two,
                    epoch: 0,
                    step_in_epoch: 0,
                    global_step: self.progress.global_step,
                };
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// One update of the current epoch. Returns `None` (after advancing to
    /// the next epoch) when the epoch had no batches left.
    fn step(&mut self, stage: Stage, source: &dyn SampleSource) -> Result<Option<LogRow>> {
        if source.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let bs = self.config.train.batch_size;
        let Progress { epoch, step_in_epoch, .. } = self.progress;
        let order = epoch_order(self.config.train.seed, stage, epoch, source.len());
        let Some(ids) = order.chunks(bs).nth(step_in_epoch) else {
            self.progress.epoch += 1;
            self.progress.step_in_epoch = 0;
            return Ok(None);
        };
        let samples = ids.iter().map(|&i| source.sample(i)).collect::<Result<Vec<_>>>()?;
        let batch = collate(&samples)?;
        let lr = self.config.train.learning_rate(stage, epoch);

        let noise_seed = derive_seed(self.config.train.seed, &format!("noise/{}", self.progress.global_step));
        let x = add_input_noise(&batch.x, self.config.train.input_noise_std, noise_seed)?;
        let out = self.generator.forward(&x, Mode::Train)?;
        let mut critic = CriticLog::default();
        if stage == Stage::Two && self.config.train.use_gan {
            for k in 0..self.config.train.critic_steps_per_gen_step {
                critic = self.update_critics(&out, &batch, lr, k)?;
            }
        }
        let mut losses = self.update_generator(&out, &batch, lr, stage)?;
        losses.adv_d = critic.adv_d;
        losses.gp_c = critic.gp_c;
        losses.gp_a = critic.gp_a;

        self.progress.global_step += 1;
        self.progress.step_in_epoch += 1;
        let row = LogRow::new(self.progress.global_step, &losses, lr);
        debug!(
            "stage {} epoch {epoch} step {}: total {:.6} l1 {:.6} att {:.6} adv_d {:.6}",
            stage.number(),
            row.step,
            row.total,
            row.l1,
            row.attention,
            row.adv_d
        );
        self.history.push(row);
        Ok(Some(row))
    }

    /// One optimizer step for each enabled critic against the detached
    /// generator output `out`. `k` numbers repeated critic steps within a
    /// generator step and only affects the penalty draws.
    pub fn update_critics(&mut self, out: &GeneratorOutput, batch: &Batch, lr: f64, k: usize) -> Result<CriticLog> {
        let train = &self.config.train;
        let mode = train.adv_mode;
        let gp_lambda = self.config.losses.gp_lambda;
        let step = self.progress.global_step;
        let seed = train.seed;
        let use_attention = train.use_attention;

        let (fake_c, fake_w, real_w) = {
            let _guard = no_grad();
            (
                out.color.detach(),
                weighted(&out.color, &out.saliency)?.detach(),
                weighted(&batch.c, &batch.s)?,
            )
        };
        let zero = Tensor::scalar(0.0);

        let color = CriticScores {
            real: self.critic_color.forward(&batch.c, Mode::Train)?,
            fake: self.critic_color.forward(&fake_c, Mode::Eval)?,
        };
        let gp_c = match mode {
            AdvMode::Wgan => gradient_penalty(
                &mut self.critic_color,
                &batch.c,
                &fake_c,
                gp_lambda,
                derive_seed(seed, &format!("gp_c/{step}/{k}")),
            )?,
            AdvMode::Lsgan => zero.clone(),
        };
        let (attention, gp_a) = if use_attention {
            let scores = CriticScores {
                real: self.critic_attention.forward(&real_w, Mode::Train)?,
                fake: self.critic_attention.forward(&fake_w, Mode::Eval)?,
            };
            let gp = match mode {
                AdvMode::Wgan => gradient_penalty(
                    &mut self.critic_attention,
                    &real_w,
                    &fake_w,
                    gp_lambda,
                    derive_seed(seed, &format!("gp_a/{step}/{k}")),
                )?,
                AdvMode::Lsgan => zero.clone(),
            };
            (Some(scores), gp)
        } else {
            (None, zero.clone())
        };

        let loss = critic_loss(&color, attention.as_ref(), &gp_c, &gp_a, mode)?;
        let log = CriticLog {
            adv_d: critic_loss(&color, attention.as_ref(), &zero, &zero, mode)?.item()?,
            gp_c: gp_c.item()?,
            gp_a: gp_a.item()?,
        };
        let value = loss.item()?;
        if !(value.is_finite() && log.adv_d.is_finite() && log.gp_c.is_finite() && log.gp_a.is_finite()) {
            return Err(self.abort(format!("non-finite critic loss {value} ({log:?})")));
        }
        let grads = backward(&loss)?;
        self.opt_c.step(&mut self.critic_color, &grads, lr)?;
        if use_attention {
            self.opt_a.step(&mut self.critic_attention, &grads, lr)?;
        }
        Ok(log)
    }

    /// One generator step on `out`. Stage 1 optimizes the pixel and
    /// attention terms; stage 2 adds the adversarial and perceptual terms
    /// that are enabled. Critic parameters are frozen for the duration.
    pub fn update_generator(
        &mut self,
        out: &GeneratorOutput,
        batch: &Batch,
        lr: f64,
        stage: Stage,
    ) -> Result<LossBreakdown> {
        let train = self.config.train.clone();
        let l1 = pixel_loss(&out.color, &batch.c, train.pixel_mode)?;
        let attention = if train.use_attention {
            Some(attention_loss(&out.color, &out.saliency, &batch.c, &batch.s)?)
        } else {
            None
        };
        let adv = if stage == Stage::Two && train.use_gan {
            set_frozen(&mut self.critic_color, true);
            set_frozen(&mut self.critic_attention, true);
            let adv = self.adversarial_term(out, train.use_attention, train.adv_mode);
            set_frozen(&mut self.critic_color, false);
            set_frozen(&mut self.critic_attention, false);
            Some(adv?)
        } else {
            None
        };
        let perceptual = match (&self.extractor, stage) {
            (Some(extractor), Stage::Two) => Some(perceptual_loss(extractor, &out.color, &batch.c)?),
            _ => None,
        };
        let total = combine_generator_loss(
            &l1,
            attention.as_ref(),
            adv.as_ref(),
            perceptual.as_ref(),
            &self.config.losses,
            stage,
        )?;
        let value = |t: Option<&Tensor>| t.map_or(Ok(0.0), Tensor::item);
        let losses = LossBreakdown {
            l1: l1.item()?,
            attention: value(attention.as_ref())?,
            adv_g: value(adv.as_ref())?,
            perceptual: value(perceptual.as_ref())?,
            total: total.item()?,
            ..LossBreakdown::default()
        };
        if !losses.is_finite() {
            return Err(self.abort(format!("non-finite generator loss {losses:?}")));
        }
        let grads = backward(&total)?;
        self.opt_g.step(&mut self.generator, &grads, lr)?;
        Ok(losses)
    }

    fn adversarial_term(&mut self, out: &GeneratorOutput, use_attention: bool, mode: AdvMode) -> Result<Tensor> {
        let dc = self.critic_color.forward(&out.color, Mode::Eval)?;
        let da = if use_attention {
            Some(self.critic_attention.forward(&weighted(&out.color, &out.saliency)?, Mode::Eval)?)
        } else {
            None
        };
        generator_adv_loss(&dc, da.as_ref(), mode)
    }

    /// Writes a diagnostic checkpoint of the pre-update state and builds the
    /// abort error.
    fn abort(&self, detail: String) -> Error {
        let dir: PathBuf = self.config.output.dir.join("diagnostic");
        let diagnostic = match self.save_checkpoint(&dir) {
            Ok(()) => Some(dir),
            Err(e) => {
                error!("could not write diagnostic checkpoint: {e}");
                None
            }
        };
        Error::TrainingAborted {
            step: self.progress.global_step,
            detail,
            diagnostic,
        }
    }
}
