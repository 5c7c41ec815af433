use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use scgan_core::dataset::{build_index, DiskSource};
use scgan_core::training::read_manifest;
use scgan_core::{InMemorySource, RunConfig, SampleSource, Stage, Trainer};

use crate::{StageArg, TrainArgs};

/// Datasets up to this many decoded bytes are held in memory.
const IN_MEMORY_LIMIT: usize = 1 << 30;

fn stage_dir(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.output.dir.join(format!("stage{}", stage.number()))
}

fn open_source(cfg: &RunConfig) -> Result<Box<dyn SampleSource>> {
    let (Some(color), Some(saliency)) = (&cfg.data.color_dir, &cfg.data.saliency_dir) else {
        bail!("data.color_dir and data.saliency_dir must be set (config file or --color-dir/--saliency-dir)");
    };
    let index = build_index(color, saliency, &cfg.data.split)?;
    if index.is_empty() {
        bail!("no usable training images in {}", color.display());
    }
    log::info!(
        "{} training pairs ({} grayscale images excluded)",
        index.len(),
        index.excluded.len()
    );
    let size = cfg.generator.input_size;
    // x, c and s as f64: five planes per sample
    let bytes = index.len() * size * size * 5 * std::mem::size_of::<f64>();
    if bytes <= IN_MEMORY_LIMIT {
        Ok(Box::new(InMemorySource::from_index(&index, size)?))
    } else {
        Ok(Box::new(DiskSource { index, target_size: size }))
    }
}

fn initial_trainer(cfg: &RunConfig, args: &TrainArgs) -> Result<Trainer> {
    if let Some(dir) = &args.resume {
        let trainer = Trainer::from_checkpoint(cfg.clone(), dir)
            .with_context(|| format!("resuming from {}", dir.display()))?;
        let p = trainer.progress();
        log::info!(
            "resumed stage {} epoch {} step {} (global step {})",
            p.stage.number(),
            p.epoch,
            p.step_in_epoch,
            p.global_step
        );
        return Ok(trainer);
    }
    if args.stage != StageArg::Two {
        return Ok(Trainer::new(cfg.clone())?);
    }
    let stage1 = stage_dir(cfg, Stage::One);
    if stage1.join("manifest.json").is_file() {
        let manifest = read_manifest(&stage1)?;
        log::info!("starting stage 2 from {} (global step {})", stage1.display(), manifest.global_step);
        return Ok(Trainer::from_checkpoint(cfg.clone(), &stage1)?);
    }
    if !args.from_scratch {
        bail!(
            "stage 2 needs a stage-1 checkpoint at {}; train stage 1 first or pass --from-scratch",
            stage1.display()
        );
    }
    log::warn!("stage 2 starts from freshly initialized models");
    Ok(Trainer::new(cfg.clone())?)
}

fn save(trainer: &Trainer, dir: &Path) -> Result<()> {
    trainer
        .save_checkpoint(dir)
        .with_context(|| format!("writing checkpoint {}", dir.display()))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let source = open_source(&cfg)?;
    let mut trainer = initial_trainer(&cfg, args)?;
    let stages: &[Stage] = match args.stage {
        StageArg::One => &[Stage::One],
        StageArg::Two => &[Stage::Two],
        StageArg::All => &[Stage::One, Stage::Two],
    };
    for &stage in stages {
        if stage == Stage::One && trainer.progress().stage == Stage::Two {
            log::info!("checkpoint is already past stage 1");
            continue;
        }
        let dir = stage_dir(&cfg, stage);
        let epochs = cfg.train.epochs(stage);
        log::info!("stage {}: {epochs} epochs, checkpoints in {}", stage.number(), dir.display());
        trainer.train_stage(stage, source.as_ref(), &mut |t| {
            let p = t.progress();
            if let Some(row) = t.history().last() {
                log::info!(
                    "stage {} epoch {}/{epochs}: l1 {:.4} att {:.4} adv_g {:.4} perc {:.4} total {:.4} lr {:.2e}",
                    stage.number(),
                    p.epoch,
                    row.l1,
                    row.attention,
                    row.adv_g,
                    row.perceptual,
                    row.total,
                    row.lr
                );
            }
            t.save_checkpoint(&dir)
        })?;
        // also covers a stage with zero epochs
        save(&trainer, &dir)?;
    }
    Ok(())
}
