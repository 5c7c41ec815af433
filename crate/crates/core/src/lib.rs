//! Saliency-guided colorization with generative adversarial networks.

pub mod config;
pub mod critic;
pub mod dataset;
pub mod error;
pub mod generator;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod perceptual;
pub mod tensor;
pub mod training;
pub mod weights;

pub use config::{AblationSetting, RunConfig};
pub use critic::{Critic, CriticConfig, PatchCritic};
pub use dataset::{DatasetIndex, InMemorySource, SampleSource, TrainingSample};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig, GeneratorOutput};
pub use imaging::{Image8, NetImage, SaliencyMap, WeightedImage};
pub use losses::{AdvMode, LossBreakdown, LossWeights, PixelMode, Stage};
pub use metrics::{CciForm, CciRecord, MetricsReport};
pub use nn::Mode;
pub use tensor::Tensor;
pub use training::{lr_schedule, TrainConfig, Trainer};
