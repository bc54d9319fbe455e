//! Per-image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Image, CHANNELS};
use crate::scalar::Scalar;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    a.ensure_same_dims(b, "mse")?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio with peak 1, capped at [`PSNR_CAP`].
pub fn psnr<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| g[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5), mean over the
/// valid region and over channels.
pub fn ssim<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim needs sides >= {SSIM_WINDOW}, got {h}x{w}")));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..CHANNELS {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(CHANNELS).map(|v| v.as_f64()).collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(CHANNELS).map(|v| v.as_f64()).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &g);
        let my = filter_valid(&y, h, w, &g);
        let sxx = filter_valid(&prod(&x, &x), h, w, &g);
        let syy = filter_valid(&prod(&y, &y), h, w, &g);
        let sxy = filter_valid(&prod(&x, &y), h, w, &g);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let (vx, vy, cxy) = (sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy);
            acc += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / CHANNELS as f64)
}

/// Pearson correlation over all values; `None` when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn from_pairs<S: Scalar>(preds: &[Image<S>], refs: &[Image<S>]) -> Result<Self> {
        if preds.len() != refs.len() {
            return Err(Error::dims(format!("{} predictions for {} references", preds.len(), refs.len())));
        }
        let samples = preds
            .iter()
            .zip(refs)
            .map(|(p, r)| Ok(SampleMetrics { psnr: psnr(p, r)?, ssim: ssim(p, r)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_samples(samples))
    }

    pub fn from_samples(samples: Vec<SampleMetrics>) -> Self {
        let count = samples.len();
        let mean = |f: fn(&SampleMetrics) -> f64| if count == 0 { 0.0 } else { samples.iter().map(f).sum::<f64>() / count as f64 };
        Self { mean_psnr: mean(|s| s.psnr), mean_ssim: mean(|s| s.ssim), count, samples }
    }
}
