#![allow(dead_code)]

use scgan_core::dataset::make_toy_dataset;
use scgan_core::{InMemorySource, RunConfig};

/// Smallest configuration that exercises every component.
pub fn tiny_config(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.generator.input_size = 32;
    cfg.generator.width_multiplier = 0.125;
    cfg.generator.global_feature_channels = 8;
    cfg.critic.width_multiplier = 0.125;
    cfg.perceptual.width_multiplier = 0.0625;
    cfg.train.batch_size = 2;
    cfg.train.stage1_epochs = 2;
    cfg.train.stage2_epochs = 2;
    cfg.train.seed = 11;
    cfg.output.dir = out.to_path_buf();
    cfg
}

pub fn tiny_source(n: usize) -> InMemorySource {
    InMemorySource::new(make_toy_dataset(n, 32, 5, None).unwrap())
}
