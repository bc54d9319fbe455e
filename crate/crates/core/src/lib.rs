//! Reference-guided light-effect transfer at desk scale.

pub mod decouple;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod fsutil;
pub mod imagecore;
pub mod nn;
pub mod scalar;
pub mod synthdata;
pub mod training;
pub mod translight;
pub mod triplets;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image32 = imagecore::Image<f32>;
pub type Image64 = imagecore::Image<f64>;
pub type LightImage32 = imagecore::LightImage<f32>;
pub type LightImage64 = imagecore::LightImage<f64>;
pub type DecoupleModel32 = decouple::DecoupleModel<f32>;
pub type DecoupleModel64 = decouple::DecoupleModel<f64>;
pub type TransLight32 = translight::TransLight<f32>;
pub type TransLight64 = translight::TransLight<f64>;
