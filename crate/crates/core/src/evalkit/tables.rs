//! Comparison harnesses for decoupling and transfer models.

use serde::{Deserialize, Serialize};

use super::metrics::{correlation, psnr, MetricReport};
use super::light_fid;
use super::success::light_score;
use crate::decouple::{extract_light_batch, remove_light_batch, DecoupleModel};
use crate::error::{Error, Result};
use crate::imagecore::{composite, Image, LightImage, SynthesisParams};
use crate::scalar::Scalar;
use crate::synthdata::LightKind;
use crate::translight::{TransLight, TransferRequest};
use crate::triplets::{cosine, Embedder, Triplet};

/// Held-out decoupling sample with ground truth.
#[derive(Clone, Debug)]
pub struct DecoupleSample<S> {
    pub input: Image<S>,
    pub content: Image<S>,
    pub light: LightImage<S>,
    pub kind: Option<LightKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalEval {
    pub count: usize,
    /// Mean per-sample PSNR of the prediction against the clean content.
    pub model_psnr: f64,
    /// Mean per-sample PSNR of the untouched input against the clean content.
    pub input_psnr: f64,
}

impl RemovalEval {
    pub fn gain_db(&self) -> f64 {
        self.model_psnr - self.input_psnr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionEval {
    pub count: usize,
    pub dark_mean: f64,
    /// Mean over samples whose true light is not constant.
    pub correlation: f64,
    pub correlated: usize,
    pub mse: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn batched<T, U>(items: &[T], size: usize, mut f: impl FnMut(&[T], usize) -> Result<Vec<U>>) -> Result<Vec<U>> {
    let mut out = Vec::with_capacity(items.len());
    for (k, chunk) in items.chunks(size.max(1)).enumerate() {
        out.extend(f(chunk, k * size.max(1))?);
    }
    Ok(out)
}

pub fn evaluate_removal<S: Scalar>(
    model: &DecoupleModel<S>,
    samples: &[DecoupleSample<S>],
    n_steps: usize,
    seed: u64,
    batch: usize,
) -> Result<RemovalEval> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let preds = batched(samples, batch, |chunk, off| {
        let seeds: Vec<u64> = (0..chunk.len()).map(|i| seed.wrapping_add((off + i) as u64)).collect();
        remove_light_batch(model, &chunk.iter().map(|s| &s.input).collect::<Vec<_>>(), n_steps, &seeds)
    })?;
    let model_psnr = preds.iter().zip(samples).map(|(p, s)| psnr(p, &s.content)).collect::<Result<Vec<_>>>()?;
    let input_psnr = samples.iter().map(|s| psnr(&s.input, &s.content)).collect::<Result<Vec<_>>>()?;
    Ok(RemovalEval { count: samples.len(), model_psnr: mean(model_psnr.into_iter()), input_psnr: mean(input_psnr.into_iter()) })
}

pub fn evaluate_extraction<S: Scalar>(
    model: &DecoupleModel<S>,
    samples: &[DecoupleSample<S>],
    n_steps: usize,
    seed: u64,
    batch: usize,
    dark_threshold: f64,
) -> Result<ExtractionEval> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let preds = batched(samples, batch, |chunk, off| {
        let seeds: Vec<u64> = (0..chunk.len()).map(|i| seed.wrapping_add((off + i) as u64)).collect();
        let kinds: Vec<Option<LightKind>> = chunk.iter().map(|s| s.kind).collect();
        extract_light_batch(model, &chunk.iter().map(|s| &s.input).collect::<Vec<_>>(), Some(&kinds), n_steps, &seeds)
    })?;
    let scores = preds.iter().zip(samples).map(|(p, s)| light_score(p, &s.light, dark_threshold)).collect::<Result<Vec<_>>>()?;
    let corrs: Vec<f64> = scores.iter().filter_map(|s| s.correlation).collect();
    let mse = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| super::metrics::mse(p.as_image(), s.light.as_image()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtractionEval {
        count: samples.len(),
        dark_mean: mean(scores.iter().map(|s| s.dark_mean)),
        correlation: mean(corrs.iter().copied()),
        correlated: corrs.len(),
        mse: mean(mse.into_iter()),
    })
}

/// Mean `1 - cos` between embeddings of paired images.
pub fn embedding_distance<S: Scalar>(e: &Embedder<S>, a: &[Image<S>], b: &[Image<S>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dims("embedding distance needs two nonempty sets of equal size"));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        let v = e.embed_batch(&[x, y])?;
        total += 1.0 - cosine(&v[0], &v[1]);
    }
    Ok(total / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub embed_distance: f64,
    pub light_fid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub count: usize,
    pub rows: Vec<MethodRow>,
}

impl TransferTable {
    pub fn row(&self, name: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub const FULL: &str = "full";
pub const NO_ADAPTER: &str = "no_adapter";
pub const NAIVE: &str = "content_plus_light";
pub const CONTENT_ONLY: &str = "content_only";

/// Generates outputs for held-out triplets with each model and scores them
/// against the images with light, alongside the two non-learned baselines.
pub fn transfer_table<S: Scalar>(
    models: &[(&str, &TransLight<S>)],
    e: &Embedder<S>,
    held_out: &[&Triplet<S>],
    n_steps: usize,
    seed: u64,
    batch: usize,
) -> Result<TransferTable> {
    if held_out.is_empty() {
        return Err(Error::invalid("no held-out triplets"));
    }
    let reference: Vec<Image<S>> = held_out.iter().map(|t| t.image_with_light.clone()).collect();
    let mut sets: Vec<(String, Vec<Image<S>>)> = Vec::new();
    for (name, model) in models {
        let out = batched(held_out, batch, |chunk, off| {
            let reqs: Vec<TransferRequest<S>> = chunk
                .iter()
                .enumerate()
                .map(|(i, t)| TransferRequest {
                    fg_mask: Some(t.mask.clone()),
                    n_steps,
                    seed: seed.wrapping_add((off + i) as u64),
                    ..TransferRequest::new(t.content.clone(), t.light.clone())
                })
                .collect();
            model.transfer_batch(&reqs)
        })?;
        sets.push((name.to_string(), out));
    }
    let naive = held_out.iter().map(|t| composite(&t.content, &t.light, SynthesisParams::UNIT)).collect::<Result<Vec<_>>>()?;
    sets.push((NAIVE.into(), naive));
    sets.push((CONTENT_ONLY.into(), held_out.iter().map(|t| t.content.clone()).collect()));
    let rows = sets
        .into_iter()
        .map(|(name, imgs)| {
            let m = MetricReport::from_pairs(&imgs, &reference)?;
            Ok(MethodRow {
                psnr: m.mean_psnr,
                ssim: m.mean_ssim,
                embed_distance: embedding_distance(e, &imgs, &reference)?,
                light_fid: light_fid(e, &imgs, &reference)?,
                name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferTable { count: held_out.len(), rows })
}

/// Mean absolute pixel difference.
pub fn mean_abs_diff<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    a.ensure_same_dims(b, "mean_abs_diff")?;
    Ok(mean(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).as_f64().abs())))
}

/// Pearson correlation of two images over all channels.
pub fn image_correlation<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<Option<f64>> {
    a.ensure_same_dims(b, "image_correlation")?;
    let x: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    Ok(correlation(&x, &y))
}
