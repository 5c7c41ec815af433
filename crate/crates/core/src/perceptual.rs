//! Frozen VGG-16 feature extractor for the perceptual loss.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::scaled;
use crate::nn::{load_state, normal_vec, param_rng, Module, Param};
use crate::tensor::Tensor;
use crate::weights;

/// Named convolution layers of VGG-16 in order; a 2×2 max pool follows the
/// last layer of each block.
pub const VGG16_LAYERS: [&str; 13] = [
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1", "conv4_2",
    "conv4_3", "conv5_1", "conv5_2", "conv5_3",
];
const WIDTHS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
const POOL_AFTER: [&str; 4] = ["conv1_2", "conv2_2", "conv3_3", "conv4_3"];

pub const DEFAULT_LAYER: &str = "conv3_3";
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Maps an image batch in [-1, 1] to feature activations.
pub trait FeatureExtractor {
    /// Name of the layer whose activations `extract` returns.
    fn layer(&self) -> &str;
    fn extract(&self, x: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub layer: String,
    pub width_multiplier: f64,
    /// Seed of the random extractor used when no weights are supplied.
    pub seed: u64,
    pub weights: Option<PathBuf>,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            layer: DEFAULT_LAYER.to_string(),
            width_multiplier: 1.0,
            seed: 0x5eed_f00d,
            weights: None,
        }
    }
}

/// VGG-16 feature stack truncated at the configured layer. Activations are
/// taken after the ReLU; parameters never receive gradients.
#[derive(Clone, Debug)]
pub struct Vgg16Features {
    layer: String,
    convs: Vec<(String, Param, Param)>,
}

impl Vgg16Features {
    /// Random-weight extractor (He-normal weights, zero biases), optionally
    /// overwritten from `config.weights`.
    pub fn new(config: &PerceptualConfig) -> Result<Vgg16Features> {
        let depth = VGG16_LAYERS
            .iter()
            .position(|&l| l == config.layer)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown feature layer `{}`; expected one of {}",
                    config.layer,
                    VGG16_LAYERS.join(", ")
                ))
            })?;
        if !(config.width_multiplier.is_finite() && config.width_multiplier > 0.0) {
            return Err(Error::Config("perceptual width_multiplier must be positive".into()));
        }
        let mut convs = Vec::with_capacity(depth + 1);
        let mut cin = 3;
        for (name, &width) in VGG16_LAYERS.iter().zip(&WIDTHS).take(depth + 1) {
            let cout = scaled(width, config.width_multiplier);
            let fan_in = (cin * 9) as f64;
            let w = normal_vec(
                cout * cin * 9,
                0.0,
                (2.0 / fan_in).sqrt(),
                &mut param_rng(config.seed, &format!("{name}.weight")),
            );
            convs.push((
                name.to_string(),
                Param::buffer(w, &[cout, cin, 3, 3])?,
                Param::buffer(vec![0.0; cout], &[cout])?,
            ));
            cin = cout;
        }
        let mut out = Vgg16Features {
            layer: config.layer.clone(),
            convs,
        };
        if let Some(path) = &config.weights {
            out.load(path)?;
        }
        Ok(out)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let (arrays, _) = weights::load_arrays(path)?;
        load_state(self, &arrays)
    }

    /// Activations of every layer up to the configured one, by name.
    pub fn forward_all(&self, x: &Tensor) -> Result<Vec<(String, Tensor)>> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape("perceptual", format!("expected 3 channels, got {c}")));
        }
        // [-1, 1] → [0, 1] → ImageNet statistics
        let mean = Tensor::new(IMAGENET_MEAN.to_vec(), &[1, 3, 1, 1])?;
        let std = Tensor::new(IMAGENET_STD.to_vec(), &[1, 3, 1, 1])?;
        let mut y = x.add_scalar(1.0)?.scale(0.5)?.sub(&mean)?.div(&std)?;
        let mut out = Vec::with_capacity(self.convs.len());
        let mut previous: Option<&str> = None;
        for (name, w, b) in &self.convs {
            if previous.is_some_and(|p| POOL_AFTER.contains(&p)) {
                y = y.max_pool2d(2, 2)?;
            }
            previous = Some(name);
            let bias = b.tensor().reshape(&[1, b.shape()[0], 1, 1])?;
            y = y.conv2d(w.tensor(), 1, 1)?.add(&bias)?.relu()?;
            out.push((name.clone(), y.clone()));
        }
        Ok(out)
    }
}

impl FeatureExtractor for Vgg16Features {
    fn layer(&self) -> &str {
        &self.layer
    }

    fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let mut all = self.forward_all(x)?;
        Ok(all.pop().expect("at least one layer").1)
    }
}

impl Module for Vgg16Features {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (name, w, b) in &self.convs {
            f(&crate::nn::join(prefix, &format!("{name}.weight")), w);
            f(&crate::nn::join(prefix, &format!("{name}.bias")), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (name, w, b) in &mut self.convs {
            f(&crate::nn::join(prefix, &format!("{name}.weight")), w);
            f(&crate::nn::join(prefix, &format!("{name}.bias")), b);
        }
    }
}
