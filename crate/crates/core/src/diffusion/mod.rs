//! Conditional noise-prediction diffusion: schedule, denoiser, low-rank
//! adapter, control branch, loss and sampler, checkpoints.

pub mod adapter;
pub mod checkpoint;
pub mod control;
pub mod model;
pub mod schedule;
pub mod unet;

pub use adapter::{apply_adapter, LowRankAdapter};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use control::ControlBranch;
pub use model::{
    ddim_sample, draw_noise, from_model_space, initial_noise, to_model_space, loss_and_grads, predict_eps, q_sample, training_loss, Batch,
    Conditioning, LossGrads, ModelRef, NoiseDraw,
};
pub use schedule::{make_schedule, NoiseSchedule};
pub use unet::{Denoiser, DenoiserSpec, Weights, NOISE_CHANNELS};
