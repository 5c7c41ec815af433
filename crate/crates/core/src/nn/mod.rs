//! Layers, parameter bookkeeping and the optimizer.

mod init;
mod layers;
mod module;
mod optim;

pub use init::{derive_seed, normal_vec, param_rng};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Init, Mode, Padding};
pub use module::{
    checksum, load_state, parameter_count, set_frozen, state_dict, Module, NamedArray, Param,
};
pub(crate) use module::join;
pub use optim::{Adam, AdamConfig};
