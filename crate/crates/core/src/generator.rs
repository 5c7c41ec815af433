//! Colorization generator: a U-Net mainstream with a parallel global
//! feature encoder fused at the bottleneck, a tanh color head and a
//! sigmoid saliency head fed by the three finest decoder layers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    join, load_state, parameter_count, BatchNorm2d, Conv2d, ConvTranspose2d, Init, Mode, Module,
    NamedArray, Padding, Param,
};
use crate::tensor::Tensor;
use crate::weights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub base_channels: usize,
    pub width_multiplier: f64,
    /// Number of stride-2 stages in the mainstream encoder.
    pub encoder_depth: usize,
    pub global_feature_channels: usize,
    pub use_global_encoder: bool,
    pub batch_norm: bool,
    pub leaky_slope: f64,
    pub init_std: f64,
    /// Optional archive with pretrained global-encoder weights.
    pub global_weights: Option<PathBuf>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            input_size: 256,
            base_channels: 64,
            width_multiplier: 1.0,
            encoder_depth: 5,
            global_feature_channels: 512,
            use_global_encoder: true,
            batch_norm: true,
            leaky_slope: 0.2,
            init_std: 0.02,
            global_weights: None,
        }
    }
}

/// Halvings performed by the global encoder (one per VGG block).
const GLOBAL_STAGES: usize = 5;
/// VGG-16 convolutions per block and block widths.
const VGG_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

pub(crate) fn scaled(channels: usize, multiplier: f64) -> usize {
    ((channels as f64 * multiplier).round() as usize).max(1)
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_channels < 4 {
            return fail(format!("base_channels must be at least 4, got {}", self.base_channels));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return fail(format!("width_multiplier must be positive, got {}", self.width_multiplier));
        }
        if self.encoder_depth < 3 {
            return fail(format!(
                "encoder_depth must be at least 3 for the saliency branch, got {}",
                self.encoder_depth
            ));
        }
        let unit = 1usize << self.encoder_depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(unit) {
            return fail(format!(
                "input_size {} is not divisible by 2^{}",
                self.input_size, self.encoder_depth
            ));
        }
        if self.use_global_encoder && self.encoder_depth != GLOBAL_STAGES {
            return fail(format!(
                "the global encoder fuses at input/32 and needs encoder_depth {GLOBAL_STAGES}, got {}",
                self.encoder_depth
            ));
        }
        if self.use_global_encoder && self.global_feature_channels == 0 {
            return fail("global_feature_channels must be positive".into());
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return fail(format!("init_std must be non-negative, got {}", self.init_std));
        }
        Ok(())
    }

    /// Mainstream encoder widths per level.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.encoder_depth)
            .map(|i| scaled(self.base_channels * (1usize << i.min(3)), self.width_multiplier))
            .collect()
    }

    /// Smallest side length accepted by the network.
    pub fn size_unit(&self) -> usize {
        1 << self.encoder_depth
    }
}

/// Convolution, optional batch norm, optional LeakyReLU.
#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    slope: Option<f64>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        norm: bool,
        slope: Option<f64>,
        init: &Init,
    ) -> Result<ConvBlock> {
        let pad = (kernel - 1) / 2;
        Ok(ConvBlock {
            conv: Conv2d::new(&join(name, "conv"), cin, cout, kernel, stride, pad, Padding::Reflect, !norm, init)?,
            bn: norm.then(|| BatchNorm2d::new(&join(name, "bn"), cout, init)).transpose()?,
            slope,
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        if let Some(bn) = &mut self.bn {
            y = bn.forward(&y, mode)?;
        }
        match self.slope {
            Some(s) => y.leaky_relu(s),
            None => Ok(y),
        }
    }
}

impl Module for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        if let Some(bn) = &self.bn {
            bn.visit(&join(prefix, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(&join(prefix, "bn"), f);
        }
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    deconv: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    slope: f64,
}

impl UpBlock {
    fn new(name: &str, cin: usize, cout: usize, norm: bool, slope: f64, init: &Init) -> Result<UpBlock> {
        Ok(UpBlock {
            deconv: ConvTranspose2d::new(&join(name, "deconv"), cin, cout, 4, 2, 1, !norm, init)?,
            bn: norm.then(|| BatchNorm2d::new(&join(name, "bn"), cout, init)).transpose()?,
            slope,
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = self.deconv.forward(x)?;
        if let Some(bn) = &mut self.bn {
            y = bn.forward(&y, mode)?;
        }
        y.leaky_relu(self.slope)
    }
}

impl Module for UpBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.deconv.visit(&join(prefix, "deconv"), f);
        if let Some(bn) = &self.bn {
            bn.visit(&join(prefix, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.deconv.visit_mut(&join(prefix, "deconv"), f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(&join(prefix, "bn"), f);
        }
    }
}

/// VGG-16 layer plan on one input channel, with the last convolution of
/// each block strided instead of followed by a pool.
#[derive(Clone, Debug)]
pub struct GlobalEncoder {
    layers: Vec<ConvBlock>,
}

impl GlobalEncoder {
    fn new(config: &GeneratorConfig, init: &Init) -> Result<GlobalEncoder> {
        let total: usize = VGG_BLOCKS.iter().map(|b| b.0).sum();
        let mut layers = Vec::with_capacity(total);
        let mut cin = 1;
        for (count, width) in VGG_BLOCKS {
            for j in 0..count {
                let index = layers.len();
                let last_layer = index + 1 == total;
                let cout = if last_layer {
                    config.global_feature_channels
                } else {
                    scaled(width, config.width_multiplier)
                };
                let stride = if j + 1 == count { 2 } else { 1 };
                let norm = config.batch_norm && index > 0;
                layers.push(ConvBlock::new(
                    &format!("global.{index}"),
                    cin,
                    cout,
                    3,
                    stride,
                    norm,
                    Some(config.leaky_slope),
                    init,
                )?);
                cin = cout;
            }
        }
        Ok(GlobalEncoder { layers })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let unit = 1 << GLOBAL_STAGES;
        if c != 1 || h % unit != 0 || w % unit != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "global_encoder_forward",
                format!("expected 1 channel and sides divisible by {unit}, got {c}x{h}x{w}"),
            ));
        }
        let mut y = x.clone();
        for layer in &mut self.layers {
            y = layer.forward(&y, mode)?;
        }
        Ok(y)
    }
}

impl Module for GlobalEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Color prediction in [-1, 1] and saliency prediction in [0, 1], both
/// `N×C×H×W` with the input's spatial size.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    pub color: Tensor,
    pub saliency: Tensor,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    encoder: Vec<ConvBlock>,
    global: Option<GlobalEncoder>,
    decoder: Vec<UpBlock>,
    output: Conv2d,
    saliency: Conv2d,
}

impl Generator {
    /// Builds a generator with every weight drawn from `N(0, init_std²)`
    /// using a per-parameter stream derived from `seed`.
    pub fn new(config: &GeneratorConfig, seed: u64) -> Result<Generator> {
        config.validate()?;
        let init = Init {
            seed,
            std: config.init_std,
        };
        let ch = config.encoder_channels();
        let depth = config.encoder_depth;
        let slope = config.leaky_slope;
        let bn = config.batch_norm;

        let mut encoder = Vec::with_capacity(depth);
        let mut cin = 1;
        for (i, &cout) in ch.iter().enumerate() {
            encoder.push(ConvBlock::new(
                &format!("encoder.{i}"),
                cin,
                cout,
                4,
                2,
                bn && i > 0,
                Some(slope),
                &init,
            )?);
            cin = cout;
        }

        let global = if config.use_global_encoder {
            Some(GlobalEncoder::new(config, &init)?)
        } else {
            None
        };
        let mut cin = ch[depth - 1] + if global.is_some() { config.global_feature_channels } else { 0 };

        // Decoder layer j restores resolution input/2^(depth-1-j); all but
        // the last are followed by the matching encoder skip.
        let mut decoder = Vec::with_capacity(depth);
        for j in 0..depth {
            let cout = if j + 1 < depth { ch[depth - 2 - j] } else { ch[0] };
            decoder.push(UpBlock::new(&format!("decoder.{j}"), cin, cout, bn, slope, &init)?);
            cin = if j + 1 < depth { cout * 2 } else { cout };
        }
        let output = Conv2d::new("output", ch[0], 3, 3, 1, 1, Padding::Reflect, true, &init)?;
        let sal_in = ch[1] + ch[0] + ch[0];
        let saliency = Conv2d::new("saliency", sal_in, 1, 1, 1, 0, Padding::Zero, true, &init)?;

        Ok(Generator {
            config: config.clone(),
            encoder,
            global,
            decoder,
            output,
            saliency,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self)
    }

    pub fn has_global_encoder(&self) -> bool {
        self.global.is_some()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let unit = self.config.size_unit();
        if c != 1 || h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::shape(
                "generator_forward",
                format!("expected N×1×H×W with H, W divisible by {unit}, got {:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Bottleneck features of the global encoder.
    pub fn global_features(&mut self, x: &Tensor, mode: Mode) -> Result<Option<Tensor>> {
        self.check_input(x)?;
        match &mut self.global {
            Some(g) => g.forward(x, mode).map(Some),
            None => Ok(None),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<GeneratorOutput> {
        self.check_input(x)?;
        let depth = self.config.encoder_depth;

        let mut skips = Vec::with_capacity(depth);
        let mut y = x.clone();
        for block in &mut self.encoder {
            y = block.forward(&y, mode)?;
            skips.push(y.clone());
        }
        if let Some(global) = &mut self.global {
            let g = global.forward(x, mode)?;
            y = Tensor::concat(&[y, g], 1)?;
        }

        let mut finest = Vec::with_capacity(3);
        for (j, block) in self.decoder.iter_mut().enumerate() {
            let d = block.forward(&y, mode)?;
            if j + 3 >= depth {
                finest.push(d.clone());
            }
            y = if j + 1 < depth {
                Tensor::concat(&[d, skips[depth - 2 - j].clone()], 1)?
            } else {
                d
            };
        }

        let color = self.output.forward(&y)?.tanh()?;

        let (_, _, h, _) = x.dims4()?;
        let mut maps = Vec::with_capacity(3);
        for d in finest {
            let factor = h / d.shape()[2];
            maps.push(d.upsample_bilinear(factor)?);
        }
        let saliency = self.saliency.forward(&Tensor::concat(&maps, 1)?)?.sigmoid()?;
        Ok(GeneratorOutput { color, saliency })
    }

    /// Replaces the global-encoder parameters from an archive. Keys may be
    /// given with or without the `global.` prefix; nothing else changes.
    pub fn load_global_encoder_weights(&mut self, path: &Path) -> Result<()> {
        let Some(global) = &mut self.global else {
            return Err(Error::Config("generator was built without a global encoder".into()));
        };
        let (arrays, _) = weights::load_arrays(path)?;
        let stripped: BTreeMap<String, NamedArray> = arrays
            .into_iter()
            .map(|(k, v)| (k.strip_prefix("global.").map(str::to_string).unwrap_or(k), v))
            .collect();
        load_state(global, &stripped).map_err(|e| match e {
            Error::LayerShape { layer, expected, found } => Error::LayerShape {
                layer: join("global", &layer),
                expected,
                found,
            },
            Error::MissingTensor(name) => Error::MissingTensor(join("global", &name)),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        weights::save_module(path, self)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        weights::load_module(path, self)
    }
}

impl Module for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        if let Some(g) = &self.global {
            g.visit(&join(prefix, "global"), f);
        }
        for (j, b) in self.decoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("decoder.{j}")), f);
        }
        self.output.visit(&join(prefix, "output"), f);
        self.saliency.visit(&join(prefix, "saliency"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("encoder.{i}")), f);
        }
        if let Some(g) = &mut self.global {
            g.visit_mut(&join(prefix, "global"), f);
        }
        for (j, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("decoder.{j}")), f);
        }
        self.output.visit_mut(&join(prefix, "output"), f);
        self.saliency.visit_mut(&join(prefix, "saliency"), f);
    }
}
