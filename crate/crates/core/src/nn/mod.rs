//! Minimal neural-network engine with hand-written backward passes.

pub mod fm;
pub mod layers;
pub mod optim;
pub mod params;

pub use fm::Fm;
pub use layers::{Conv, ConvCache, Init, Linear, LowRank};
pub use optim::AdamW;
pub use params::{Grads, ParamEntry, ParamId, ParamSet};
