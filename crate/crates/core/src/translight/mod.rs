//! Light transfer model: a frozen base denoiser, a stage-1 low-rank adapter
//! for content-preserving compositing and a stage-2 control branch that
//! injects the light image.

mod model;
mod train;

pub use model::{
    bundle_path, load_adapter, load_base, load_control, save_adapter, save_base, save_control, BundleManifest, TransLight,
    TransferRequest, BUNDLE_FILE, DEFAULT_SAMPLING_STEPS,
};
pub use train::{
    base_relight, pretrain_base, stage1_condition, stage1_train, stage2_train, train_full, BaseConfig, Stage1Config,
    Stage2Config, BASE_RELIGHT_GAINS, BASE_RELIGHT_GAMMA,
};
