//! Patch critics with spectral normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::scaled;
use crate::nn::{join, normal_vec, param_rng, Conv2d, Init, Mode, Module, Padding, Param};
use crate::tensor::{ConvGeometry, Tensor};
use crate::weights;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub width_multiplier: f64,
    pub spectral_norm: bool,
    pub power_iterations: usize,
    pub leaky_slope: f64,
    pub init_std: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            in_channels: 3,
            base_channels: 64,
            width_multiplier: 1.0,
            spectral_norm: true,
            power_iterations: 1,
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }
}

/// (width factor, stride) per hidden layer; the output layer maps to one
/// channel with stride 1.
const PLAN: [(usize, usize); 4] = [(1, 2), (2, 2), (4, 2), (8, 1)];
const KERNEL: usize = 4;
const PADDING: usize = 1;
const SIGMA_FLOOR: f64 = 1e-12;
/// Power iterations run against the initial weights before the first step.
const WARM_START_ITERATIONS: usize = 15;

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("critic channel counts must be positive".into()));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "critic width_multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if self.spectral_norm && self.power_iterations == 0 {
            return Err(Error::Config("power_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Side length of one output unit's input footprint.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for &(_, stride) in PLAN.iter().chain(std::iter::once(&(0, 1))) {
            rf += (KERNEL - 1) * jump;
            jump *= stride;
        }
        rf
    }

    /// Patch-map side length for a square input of side `size`.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let mut s = size;
        for &(_, stride) in PLAN.iter().chain(std::iter::once(&(0, 1))) {
            s = ConvGeometry::conv_out(s, KERNEL, stride, PADDING)?;
        }
        Some(s)
    }
}

/// Persistent power-iteration vectors for one weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIterationState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize_in_place(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm = norm.max(SIGMA_FLOOR);
    x.iter_mut().for_each(|v| *v /= norm);
}

/// `y = W v` for a row-major `rows × cols` matrix.
fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let ur = u[r];
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * ur;
        }
    }
    out
}

impl PowerIterationState {
    pub fn new(rows: usize, cols: usize, seed: u64, name: &str) -> PowerIterationState {
        let mut u = normal_vec(rows, 0.0, 1.0, &mut param_rng(seed, &join(name, "u")));
        let mut v = normal_vec(cols, 0.0, 1.0, &mut param_rng(seed, &join(name, "v")));
        normalize_in_place(&mut u);
        normalize_in_place(&mut v);
        PowerIterationState { u, v }
    }

    /// Runs `iters` rounds of power iteration against `w`.
    pub fn iterate(&mut self, w: &[f64], rows: usize, cols: usize, iters: usize) {
        for _ in 0..iters {
            self.v = mat_t_vec(w, rows, cols, &self.u);
            normalize_in_place(&mut self.v);
            self.u = mat_vec(w, rows, cols, &self.v);
            normalize_in_place(&mut self.u);
        }
    }

    /// Current estimate `uᵀ W v` of the top singular value.
    pub fn sigma(&self, w: &[f64], rows: usize, cols: usize) -> f64 {
        mat_vec(w, rows, cols, &self.v).iter().zip(&self.u).map(|(a, b)| a * b).sum()
    }
}

/// Divides a `rows × cols` weight by its top singular value estimated with
/// `iters` power iterations, updating `state` in place. A numerically zero
/// matrix is returned unchanged.
pub fn spectral_normalize(
    weight: &[f64],
    rows: usize,
    cols: usize,
    state: &mut PowerIterationState,
    iters: usize,
) -> Result<Vec<f64>> {
    if weight.len() != rows * cols || state.u.len() != rows || state.v.len() != cols {
        return Err(Error::shape(
            "spectral_normalize",
            format!(
                "{} values, {rows}x{cols} matrix, vectors {}/{}",
                weight.len(),
                state.u.len(),
                state.v.len()
            ),
        ));
    }
    state.iterate(weight, rows, cols, iters);
    let sigma = state.sigma(weight, rows, cols);
    if sigma.abs() < SIGMA_FLOOR {
        return Ok(weight.to_vec());
    }
    Ok(weight.iter().map(|w| w / sigma).collect())
}

#[derive(Clone, Debug)]
struct CriticLayer {
    conv: Conv2d,
    /// Power-iteration vectors kept as buffers so they are checkpointed.
    u: Option<Param>,
    v: Option<Param>,
    activation: Option<f64>,
}

impl CriticLayer {
    fn rows_cols(&self) -> (usize, usize) {
        let shape = self.conv.weight.shape();
        (shape[0], shape[1..].iter().product())
    }

    /// Weight divided by `σ = Σ W ⊙ u vᵀ`, differentiable in `W`.
    fn normalized_weight(&mut self, update: bool, iters: usize) -> Result<Tensor> {
        let (rows, cols) = self.rows_cols();
        let (Some(u), Some(v)) = (&mut self.u, &mut self.v) else {
            return Ok(self.conv.weight.tensor().clone());
        };
        let w = self.conv.weight.tensor();
        if update {
            let mut state = PowerIterationState {
                u: u.data().to_vec(),
                v: v.data().to_vec(),
            };
            state.iterate(w.data(), rows, cols, iters);
            u.set_data(state.u)?;
            v.set_data(state.v)?;
        }
        let uv: Vec<f64> = u
            .data()
            .iter()
            .flat_map(|&a| v.data().iter().map(move |&b| a * b))
            .collect();
        let outer = Tensor::new(uv, w.shape())?;
        let sigma = w.mul(&outer)?.sum()?;
        if sigma.item()?.abs() < SIGMA_FLOOR {
            return Ok(w.clone());
        }
        w.div(&sigma)
    }
}

impl Module for CriticLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        if let (Some(u), Some(v)) = (&self.u, &self.v) {
            f(&join(prefix, "sn_u"), u);
            f(&join(prefix, "sn_v"), v);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        if let (Some(u), Some(v)) = (&mut self.u, &mut self.v) {
            f(&join(prefix, "sn_u"), u);
            f(&join(prefix, "sn_v"), v);
        }
    }
}

/// Anything that maps an image batch to a score map, as required by the
/// gradient penalty.
pub trait Critic {
    fn score(&mut self, x: &Tensor) -> Result<Tensor>;
}

/// Unconditional fully convolutional critic; the output is an unbounded
/// `N×1×h×w` map of patch scores.
#[derive(Clone, Debug)]
pub struct PatchCritic {
    config: CriticConfig,
    layers: Vec<CriticLayer>,
}

impl PatchCritic {
    pub fn new(config: &CriticConfig, seed: u64, name: &str) -> Result<PatchCritic> {
        config.validate()?;
        let init = Init {
            seed,
            std: config.init_std,
        };
        let mut layers = Vec::with_capacity(PLAN.len() + 1);
        let mut cin = config.in_channels;
        let specs = PLAN
            .iter()
            .map(|&(factor, stride)| (scaled(config.base_channels * factor, config.width_multiplier), stride, true))
            .chain(std::iter::once((1, 1, false)));
        for (i, (cout, stride, hidden)) in specs.enumerate() {
            let layer_name = join(name, &format!("layers.{i}"));
            let conv = Conv2d::new(
                &join(&layer_name, "conv"),
                cin,
                cout,
                KERNEL,
                stride,
                PADDING,
                Padding::Zero,
                true,
                &init,
            )?;
            let (u, v) = if config.spectral_norm {
                let cols = cin * KERNEL * KERNEL;
                let mut state = PowerIterationState::new(cout, cols, seed, &layer_name);
                state.iterate(conv.weight.data(), cout, cols, WARM_START_ITERATIONS);
                (Some(Param::buffer(state.u, &[cout])?), Some(Param::buffer(state.v, &[cols])?))
            } else {
                (None, None)
            };
            layers.push(CriticLayer {
                conv,
                u,
                v,
                activation: hidden.then_some(config.leaky_slope),
            });
            cin = cout;
        }
        Ok(PatchCritic {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    /// In `Mode::Train` each spectral-normalized layer advances its power
    /// iteration before use; `Mode::Eval` reuses the stored vectors.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels || self.config.output_size(h.min(w)).is_none_or(|s| s == 0) {
            return Err(Error::shape(
                "critic_forward",
                format!(
                    "expected {} channels and sides of at least 16, got {c}x{h}x{w}",
                    self.config.in_channels
                ),
            ));
        }
        let iters = self.config.power_iterations;
        let mut y = x.clone();
        for layer in &mut self.layers {
            let w = layer.normalized_weight(mode == Mode::Train, iters)?;
            y = layer.conv.forward_with_weight(&y, &w)?;
            if let Some(slope) = layer.activation {
                y = y.leaky_relu(slope)?;
            }
        }
        Ok(y)
    }

    /// Spectral norm of every layer's effective (normalized) weight matrix,
    /// measured with `iters` fresh power iterations.
    pub fn effective_sigmas(&mut self, iters: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let w = layer.normalized_weight(false, 0)?;
            let (rows, cols) = layer.rows_cols();
            let mut probe = PowerIterationState::new(rows, cols, 0, "probe");
            probe.iterate(w.data(), rows, cols, iters);
            out.push(probe.sigma(w.data(), rows, cols));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        weights::save_module(path, self)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        weights::load_module(path, self)
    }
}

impl Critic for PatchCritic {
    fn score(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, Mode::Eval)
    }
}

impl Module for PatchCritic {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}
