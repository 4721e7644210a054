//! Parameters, layers and the optimizer.

mod layers;
pub(crate) mod optim;
mod params;

pub use layers::{Conv2d, ConvGru, ResidualBlock};
pub use optim::{RAdam, RAdamConfig};
pub use params::{GroupMask, NetGroup, ParamGrads, ParamId, ParamStore};
