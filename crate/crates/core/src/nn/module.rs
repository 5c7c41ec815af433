use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named model tensor: either a trainable parameter or a state buffer
/// (running statistics, power-iteration vectors) that is saved but never
/// optimized.
#[derive(Clone, Debug)]
pub struct Param {
    value: Tensor,
    trainable: bool,
    frozen: bool,
}

impl Param {
    pub fn trainable(data: Vec<f64>, shape: &[usize]) -> Result<Param> {
        Ok(Param {
            value: Tensor::variable(data, shape)?,
            trainable: true,
            frozen: false,
        })
    }

    pub fn buffer(data: Vec<f64>, shape: &[usize]) -> Result<Param> {
        Ok(Param {
            value: Tensor::new(data, shape)?,
            trainable: false,
            frozen: false,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Replaces the values, keeping shape and kind.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        let t = Tensor::new(data, self.value.shape())?;
        self.value = if self.trainable && !self.frozen {
            t.to_variable()
        } else {
            t
        };
        Ok(())
    }

    /// Stops (or resumes) gradient tracking of a trainable parameter.
    pub fn set_frozen(&mut self, frozen: bool) {
        if !self.trainable || self.frozen == frozen {
            return;
        }
        self.frozen = frozen;
        self.value = if frozen {
            self.value.detach()
        } else {
            self.value.to_variable()
        };
    }
}

/// Hierarchical parameter traversal with dotted names.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A named tensor snapshot: shape and row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Every parameter and buffer keyed by name.
pub fn state_dict(module: &dyn Module) -> BTreeMap<String, NamedArray> {
    let mut out = BTreeMap::new();
    module.visit("", &mut |name, p| {
        out.insert(
            name.to_string(),
            NamedArray {
                shape: p.shape().to_vec(),
                data: p.data().to_vec(),
            },
        );
    });
    out
}

/// Loads every parameter of `module` from `state`. Extra entries in `state`
/// are ignored; a missing or mis-shaped entry is an error naming the layer.
pub fn load_state(module: &mut dyn Module, state: &BTreeMap<String, NamedArray>) -> Result<()> {
    // Validate first so a failure leaves the module untouched.
    let mut problem = None;
    module.visit("", &mut |name, p| {
        if problem.is_some() {
            return;
        }
        match state.get(name) {
            None => problem = Some(Error::MissingTensor(name.to_string())),
            Some(arr) if arr.shape != p.shape() => {
                problem = Some(Error::LayerShape {
                    layer: name.to_string(),
                    expected: p.shape().to_vec(),
                    found: arr.shape.clone(),
                })
            }
            Some(_) => {}
        }
    });
    if let Some(err) = problem {
        return Err(err);
    }
    let mut result = Ok(());
    module.visit_mut("", &mut |name, p| {
        if result.is_ok() {
            result = p.set_data(state[name].data.clone());
        }
    });
    result
}

pub fn parameter_count(module: &dyn Module) -> usize {
    let mut count = 0;
    module.visit("", &mut |_, p| {
        if p.is_trainable() {
            count += p.data().len();
        }
    });
    count
}

/// Order-sensitive FNV-1a digest of every parameter and buffer bit pattern.
pub fn checksum(module: &dyn Module) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    module.visit("", &mut |name, p| {
        feed(name.as_bytes());
        for v in p.data() {
            feed(&v.to_bits().to_le_bytes());
        }
    });
    hash
}

pub fn set_frozen(module: &mut dyn Module, frozen: bool) {
    module.visit_mut("", &mut |_, p| p.set_frozen(frozen));
}
