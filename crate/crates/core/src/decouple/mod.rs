//! Generative decoupling: light removal (`I_S -> I`) and extraction (`I_S -> L`).

pub mod model;
pub mod pairs;

pub use model::{
    extract_light, extract_light_batch, remove_light, remove_light_batch, train_extraction, train_removal, DecoupleModel,
    ExtractionTrainConfig, ModelShape, RemovalTrainConfig, Role, Split, UNKNOWN_KIND,
};
pub use pairs::{
    draw_params, extraction_pair_with, make_extraction_pair, make_removal_pair, photometric_perturb, ExtractionPair,
    RemovalPair, RemovalSource,
};
