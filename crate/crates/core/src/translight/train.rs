use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TransLight;
use crate::decouple::{photometric_perturb, ModelShape, Split};
use crate::diffusion::{apply_adapter, to_model_space, Batch, Conditioning, ControlBranch, Denoiser, LowRankAdapter, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imagecore::{composite, mask_background_light, Image, SynthesisParams};
use crate::scalar::Scalar;
use crate::synthdata::Corpus;
use crate::training::{train, LogRecord, OptimConfig, Trainable};
use crate::triplets::Triplet;

/// Fixed tone curve the base model learns to apply: a warm relighting that
/// stands in for a generic pretrained relighting prior.
pub const BASE_RELIGHT_GAMMA: f64 = 1.25;
pub const BASE_RELIGHT_GAINS: [f64; 3] = [1.12, 0.98, 0.8];

pub fn base_relight<S: Scalar>(image: &Image<S>) -> Image<S> {
    photometric_perturb(image, BASE_RELIGHT_GAMMA, BASE_RELIGHT_GAINS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_rank")]
    pub adapter_rank: usize,
    #[serde(default = "default_scale")]
    pub adapter_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rank() -> usize {
    8
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BaseConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.iterations, self.batch_size, self.learning_rate, self.seed)
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if self.adapter_rank == 0 {
            return Err(Error::invalid("adapter_rank must be >= 1"));
        }
        self.optim().validate()
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.iterations, self.batch_size, self.learning_rate, self.seed)
    }
}

impl Stage2Config {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.iterations, self.batch_size, self.learning_rate, self.seed)
    }
}

/// Trains the base denoiser to relight corpus images (with and without
/// light) by the fixed tone curve.
pub fn pretrain_base<S: Scalar>(
    corpus: &Corpus<S>,
    split: &Split,
    shape: &ModelShape,
    cfg: &BaseConfig,
    on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(Denoiser<S>, Vec<f64>)> {
    let optim = cfg.optim();
    optim.validate()?;
    if split.train_scenes.is_empty() || split.train_lights.is_empty() || split.train_scenes.end > corpus.scenes.len() || split.train_lights.end > corpus.lights.len() {
        return Err(Error::invalid("base pretraining needs a nonempty training split inside the corpus"));
    }
    let mut base = Denoiser::new(shape.spec(6, 0), cfg.seed ^ 0xba5e)?;
    let schedule = NoiseSchedule::default();
    let make = |rng: &mut ChaCha8Rng, bs: usize| -> Result<Batch<S>> {
        let mut inputs = Vec::with_capacity(bs);
        let mut targets = Vec::with_capacity(bs);
        for _ in 0..bs {
            let s = rng.gen_range(split.train_scenes.clone());
            let l = rng.gen_range(split.train_lights.clone());
            let input = if rng.gen_bool(0.5) {
                let lb = mask_background_light(&corpus.lights[l], &corpus.masks[s])?;
                composite(&corpus.scenes[s], &lb, SynthesisParams::UNIT)?
            } else {
                corpus.scenes[s].clone()
            };
            targets.push(base_relight(&input));
            inputs.push(input);
        }
        let cond = to_model_space(&inputs.iter().collect::<Vec<_>>())?;
        Ok(Batch { x0: to_model_space(&targets.iter().collect::<Vec<_>>())?, cond: Conditioning::new(cond) })
    };
    let losses = train(Trainable::Base(&mut base), &optim, &schedule, make, on_log)?;
    Ok((base, losses))
}

/// Stage-1 condition: content plus the light outside the foreground.
pub fn stage1_condition<S: Scalar>(t: &Triplet<S>) -> Result<Image<S>> {
    composite(&t.content, &mask_background_light(&t.light, &t.mask)?, SynthesisParams::UNIT)
}

fn check_triplets<S>(triplets: &[&Triplet<S>]) -> Result<()> {
    if triplets.is_empty() {
        return Err(Error::invalid("triplet dataset is empty"));
    }
    Ok(())
}

/// Trains only a low-rank adapter on top of the frozen base.
pub fn stage1_train<S: Scalar>(
    base: &Denoiser<S>,
    triplets: &[&Triplet<S>],
    cfg: &Stage1Config,
    on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(LowRankAdapter<S>, Vec<f64>)> {
    cfg.validate()?;
    check_triplets(triplets)?;
    let conds = triplets.iter().map(|t| stage1_condition(t)).collect::<Result<Vec<_>>>()?;
    let mut adapter = LowRankAdapter::new(base, cfg.adapter_rank, cfg.adapter_scale, cfg.seed ^ 0x1a)?;
    let schedule = NoiseSchedule::default();
    let make = |rng: &mut ChaCha8Rng, bs: usize| -> Result<Batch<S>> {
        let idx: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..triplets.len())).collect();
        let cond = to_model_space(&idx.iter().map(|&i| &conds[i]).collect::<Vec<_>>())?;
        let target = to_model_space(&idx.iter().map(|&i| &triplets[i].image_with_light).collect::<Vec<_>>())?;
        Ok(Batch { x0: target, cond: Conditioning::new(cond) })
    };
    let losses = train(Trainable::Adapter { base, adapter: &mut adapter }, &cfg.optim(), &schedule, make, on_log)?;
    Ok((adapter, losses))
}

/// Trains a control branch fed with the light, on top of the frozen base
/// (and frozen adapter, when given). The condition is the content alone.
pub fn stage2_train<S: Scalar>(
    base: &Denoiser<S>,
    adapter: Option<&LowRankAdapter<S>>,
    triplets: &[&Triplet<S>],
    cfg: &Stage2Config,
    on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(ControlBranch<S>, Vec<f64>)> {
    let optim = cfg.optim();
    optim.validate()?;
    check_triplets(triplets)?;
    let weights = match adapter {
        Some(a) => apply_adapter(base.params(), a)?,
        None => base.params().clone(),
    };
    let mut branch = ControlBranch::from_denoiser(base, 3, cfg.seed ^ 0xc0)?;
    let schedule = NoiseSchedule::default();
    let make = |rng: &mut ChaCha8Rng, bs: usize| -> Result<Batch<S>> {
        let idx: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..triplets.len())).collect();
        let control = to_model_space(&idx.iter().map(|&i| triplets[i].light.as_image()).collect::<Vec<_>>())?;
        let cond = to_model_space(&idx.iter().map(|&i| &triplets[i].content).collect::<Vec<_>>())?;
        let target = to_model_space(&idx.iter().map(|&i| &triplets[i].image_with_light).collect::<Vec<_>>())?;
        Ok(Batch { x0: target, cond: Conditioning::new(cond).with_control(Some(control)) })
    };
    let losses = train(Trainable::Control { base, weights: &weights, branch: &mut branch }, &optim, &schedule, make, on_log)?;
    Ok((branch, losses))
}

/// Both stages in sequence on top of `base`.
pub fn train_full<S: Scalar>(
    base: Denoiser<S>,
    triplets: &[&Triplet<S>],
    s1: &Stage1Config,
    s2: &Stage2Config,
    mut on_log: impl FnMut(&str, &LogRecord) -> Result<()>,
) -> Result<TransLight<S>> {
    let (adapter, _) = stage1_train(&base, triplets, s1, |r| on_log("stage1", r))?;
    let (control, _) = stage2_train(&base, Some(&adapter), triplets, s2, |r| on_log("stage2", r))?;
    let mut model = TransLight::new(base);
    model.adapter = Some(adapter);
    model.control = Some(control);
    Ok(model)
}
