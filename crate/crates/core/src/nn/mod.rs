//! Minimal neural-network building blocks with hand-written reverse mode.

mod gemm;
pub mod layers;
pub mod nonlocal;
pub mod params;

pub use layers::{Activation, ChannelNorm, Conv2d, ConvBlock, FeatureMap, Linear};
pub use nonlocal::NonLocalBlock;
pub use params::{Param, ParamId, ParamSet};
