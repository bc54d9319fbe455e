//! Metrics and evaluation harnesses.

pub mod frechet;
pub mod metrics;
pub mod success;
pub mod tables;

pub use frechet::{frechet_distance, symmetric_eigen, GaussianStats, COV_EPS};
pub use metrics::{correlation, mse, psnr, ssim, MetricReport, SampleMetrics, PSNR_CAP};
pub use success::{
    light_score, success_rate_harness, success_rates, DecoupleOutcome, LightScore, SuccessCriteria, SuccessRates,
    SuccessReport,
};
pub use tables::{
    embedding_distance, evaluate_extraction, evaluate_removal, image_correlation, mean_abs_diff, transfer_table, DecoupleSample,
    ExtractionEval, MethodRow, RemovalEval, TransferTable, CONTENT_ONLY, FULL, NAIVE, NO_ADAPTER,
};

use crate::error::Result;
use crate::imagecore::Image;
use crate::scalar::Scalar;

/// Anything that maps an image to a feature vector.
pub trait Embed<S> {
    fn embed(&self, image: &Image<S>) -> Result<Vec<f64>>;
}

/// Fréchet distance between Gaussian fits of two embedded image sets.
pub fn light_fid<S: Scalar, E: Embed<S> + ?Sized>(e: &E, generated: &[Image<S>], reference: &[Image<S>]) -> Result<f64> {
    let fit = |set: &[Image<S>]| -> Result<GaussianStats> {
        GaussianStats::fit(&set.iter().map(|im| e.embed(im)).collect::<Result<Vec<_>>>()?)
    };
    frechet_distance(&fit(generated)?, &fit(reference)?)
}
