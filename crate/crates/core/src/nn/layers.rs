use super::init::{normal_vec, param_rng};
use super::module::{join, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

/// Whether layers use batch statistics (and update running averages) or
/// their stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

/// Weight initialisation policy: `N(0, std²)` weights, zero biases.
#[derive(Clone, Copy, Debug)]
pub struct Init {
    pub seed: u64,
    pub std: f64,
}

impl Init {
    pub(crate) fn weight(&self, name: &str, shape: &[usize]) -> Result<Param> {
        let len = shape.iter().product();
        let data = normal_vec(len, 0.0, self.std, &mut param_rng(self.seed, name));
        Param::trainable(data, shape)
    }

    pub(crate) fn zeros(&self, shape: &[usize]) -> Result<Param> {
        Param::trainable(vec![0.0; shape.iter().product()], shape)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub(crate) weight: Param,
    pub(crate) bias: Option<Param>,
    stride: usize,
    padding: usize,
    pad_mode: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pad_mode: Padding,
        bias: bool,
        init: &Init,
    ) -> Result<Conv2d> {
        let shape = [out_channels, in_channels, kernel, kernel];
        Ok(Conv2d {
            weight: init.weight(&join(name, "weight"), &shape)?,
            bias: bias.then(|| init.zeros(&[out_channels])).transpose()?,
            stride,
            padding,
            pad_mode,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with_weight(x, self.weight.tensor())
    }

    /// Forward pass with a substitute weight of the same shape (used for
    /// spectral normalisation).
    pub fn forward_with_weight(&self, x: &Tensor, weight: &Tensor) -> Result<Tensor> {
        let y = match self.pad_mode {
            Padding::Reflect => x.reflect_pad(self.padding)?.conv2d(weight, self.stride, 0)?,
            Padding::Zero => x.conv2d(weight, self.stride, self.padding)?,
        };
        match &self.bias {
            Some(b) => y.add(&b.tensor().reshape(&[1, b.shape()[0], 1, 1])?),
            None => Ok(y),
        }
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution (zero padded); weight layout `Cin×Cout×k×k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight: Param,
    bias: Option<Param>,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: &Init,
    ) -> Result<ConvTranspose2d> {
        let shape = [in_channels, out_channels, kernel, kernel];
        Ok(ConvTranspose2d {
            weight: init.weight(&join(name, "weight"), &shape)?,
            bias: bias.then(|| init.zeros(&[out_channels])).transpose()?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.tensor(), self.stride, self.padding)?;
        match &self.bias {
            Some(b) => y.add(&b.tensor().reshape(&[1, b.shape()[0], 1, 1])?),
            None => Ok(y),
        }
    }
}

impl Module for ConvTranspose2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Batch normalisation over (N, H, W) per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize, init: &Init) -> Result<BatchNorm2d> {
        let gamma_data = normal_vec(
            channels,
            1.0,
            init.std,
            &mut param_rng(init.seed, &join(name, "gamma")),
        );
        Ok(BatchNorm2d {
            gamma: Param::trainable(gamma_data, &[channels])?,
            beta: Param::trainable(vec![0.0; channels], &[channels])?,
            running_mean: Param::buffer(vec![0.0; channels], &[channels])?,
            running_var: Param::buffer(vec![1.0; channels], &[channels])?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.gamma.shape()[0] {
            return Err(Error::shape(
                "batch_norm",
                format!("{c} channels, layer has {}", self.gamma.shape()[0]),
            ));
        }
        let per_channel = [1, c, 1, 1];
        let normalized = match mode {
            Mode::Train => {
                let count = n * h * w;
                let mean = x.mean_keepdim(&[0, 2, 3])?;
                let centered = x.sub(&mean)?;
                let var = centered.square()?.mean_keepdim(&[0, 2, 3])?;
                let out = centered.div(&var.add_scalar(self.eps)?.sqrt()?)?;
                let _guard = no_grad();
                let unbias = if count > 1 {
                    count as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                let m = self.momentum;
                let rm: Vec<f64> = self
                    .running_mean
                    .data()
                    .iter()
                    .zip(mean.data())
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let rv: Vec<f64> = self
                    .running_var
                    .data()
                    .iter()
                    .zip(var.data())
                    .map(|(r, b)| (1.0 - m) * r + m * b * unbias)
                    .collect();
                self.running_mean.set_data(rm)?;
                self.running_var.set_data(rv)?;
                out
            }
            Mode::Eval => {
                let mean = self.running_mean.tensor().reshape(&per_channel)?;
                let std = self
                    .running_var
                    .tensor()
                    .add_scalar(self.eps)?
                    .sqrt()?
                    .reshape(&per_channel)?;
                x.sub(&mean)?.div(&std)?
            }
        };
        normalized
            .mul(&self.gamma.tensor().reshape(&per_channel)?)?
            .add(&self.beta.tensor().reshape(&per_channel)?)
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
