use std::collections::BTreeMap;

use super::module::{Module, NamedArray};
use crate::error::{Error, Result};
use crate::tensor::Gradients;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. State is tracked per parameter name, and a
/// parameter without a gradient in a given step is left untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Adam {
        Adam {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Applies one update with learning rate `lr`; returns how many
    /// parameters were updated.
    pub fn step(&mut self, module: &mut dyn Module, grads: &Gradients, lr: f64) -> Result<usize> {
        let AdamConfig { beta1, beta2, eps } = self.config;
        let mut updated = 0;
        let mut failure = None;
        module.visit_mut("", &mut |name, p| {
            if failure.is_some() || !p.is_trainable() {
                return;
            }
            let Some(g) = grads.get(p.tensor()) else {
                return;
            };
            let g = g.data();
            let entry = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                step: 0,
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            entry.step += 1;
            let bias1 = 1.0 - beta1.powi(entry.step as i32);
            let bias2 = 1.0 - beta2.powi(entry.step as i32);
            let step_size = lr / bias1;
            let bias2_sqrt = bias2.sqrt();
            let mut values = p.data().to_vec();
            for i in 0..values.len() {
                entry.m[i] = beta1 * entry.m[i] + (1.0 - beta1) * g[i];
                entry.v[i] = beta2 * entry.v[i] + (1.0 - beta2) * g[i] * g[i];
                let denom = entry.v[i].sqrt() / bias2_sqrt + eps;
                values[i] -= step_size * entry.m[i] / denom;
            }
            if let Err(e) = p.set_data(values) {
                failure = Some(e);
            }
            updated += 1;
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(updated),
        }
    }

    /// Serializable state: `m.<name>`, `v.<name>` and a scalar `step.<name>`.
    pub fn state_arrays(&self) -> BTreeMap<String, NamedArray> {
        let mut out = BTreeMap::new();
        for (name, s) in &self.state {
            let shape = vec![s.m.len()];
            out.insert(
                format!("m.{name}"),
                NamedArray {
                    shape: shape.clone(),
                    data: s.m.clone(),
                },
            );
            out.insert(
                format!("v.{name}"),
                NamedArray {
                    shape,
                    data: s.v.clone(),
                },
            );
            out.insert(
                format!("step.{name}"),
                NamedArray {
                    shape: vec![1],
                    data: vec![s.step as f64],
                },
            );
        }
        out
    }

    pub fn load_state_arrays(&mut self, arrays: &BTreeMap<String, NamedArray>) -> Result<()> {
        let mut state = BTreeMap::new();
        for (key, arr) in arrays {
            let Some(name) = key.strip_prefix("step.") else {
                continue;
            };
            let fetch = |prefix: &str| {
                arrays
                    .get(&format!("{prefix}.{name}"))
                    .map(|a| a.data.clone())
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state missing {prefix}.{name}")))
            };
            let step = arr.data.first().copied().unwrap_or(0.0);
            if step < 0.0 || step.fract() != 0.0 {
                return Err(Error::Checkpoint(format!("bad optimizer step for {name}")));
            }
            state.insert(
                name.to_string(),
                Moments {
                    step: step as u64,
                    m: fetch("m")?,
                    v: fetch("v")?,
                },
            );
        }
        self.state = state;
        Ok(())
    }
}
