//! Removal and extraction models: training, checkpoints and inference.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairs::{make_extraction_pair, make_removal_pair};
use crate::diffusion::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diffusion::{
    ddim_sample, from_model_space, to_model_space, Batch, Conditioning, Denoiser, DenoiserSpec, ModelRef, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::imagecore::{Image, LightImage};
use crate::scalar::Scalar;
use crate::synthdata::{Corpus, LightKind};
use crate::training::{train, LogRecord, OptimConfig, Trainable};

/// Class id used when no light kind is known.
pub const UNKNOWN_KIND: usize = LightKind::ALL.len();
/// Fraction of extraction batches trained with the unknown-kind id.
const KIND_DROPOUT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Removal,
    Extraction,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Removal => "removal",
            Role::Extraction => "extraction",
        }
    }
}

/// Architecture knobs shared by every model in a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub base_width: usize,
    pub depth: usize,
    pub time_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self { base_width: 16, depth: 2, time_dim: 32 }
    }
}

impl ModelShape {
    pub fn spec(&self, input_channels: usize, class_vocab: usize) -> DenoiserSpec {
        DenoiserSpec { input_channels, base_width: self.base_width, depth: self.depth, class_vocab, time_dim: self.time_dim }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovalTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_synth_mix")]
    pub synth_mix: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_synth_mix() -> f64 {
    0.8
}

impl RemovalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.synth_mix) {
            return Err(Error::invalid(format!("synth_mix {} outside [0,1]", self.synth_mix)));
        }
        self.optim().validate()
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.iterations, self.batch_size, self.learning_rate, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "yes")]
    pub use_kind_conditioning: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ExtractionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim().validate()
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.iterations, self.batch_size, self.learning_rate, self.seed)
    }
}

/// Train/held-out partition of a corpus: the last `holdout` fraction of
/// scenes and of lights is never trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train_scenes: std::ops::Range<usize>,
    pub test_scenes: std::ops::Range<usize>,
    pub train_lights: std::ops::Range<usize>,
    pub test_lights: std::ops::Range<usize>,
}

impl Split {
    pub fn new(n_scenes: usize, n_lights: usize, holdout: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&holdout) {
            return Err(Error::invalid(format!("holdout {holdout} outside [0,1)")));
        }
        let cut = |n: usize| n - ((n as f64 * holdout).round() as usize).min(n.saturating_sub(1));
        let (s, l) = (cut(n_scenes), cut(n_lights));
        if n_scenes == 0 || n_lights == 0 {
            return Err(Error::invalid("empty corpus"));
        }
        Ok(Self { train_scenes: 0..s, test_scenes: s..n_scenes, train_lights: 0..l, test_lights: l..n_lights })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    role: Role,
    spec: DenoiserSpec,
    schedule: NoiseSchedule,
    use_kind: bool,
}

#[derive(Clone, Debug)]
pub struct DecoupleModel<S> {
    pub role: Role,
    pub denoiser: Denoiser<S>,
    pub schedule: NoiseSchedule,
    pub use_kind: bool,
}

impl<S: Scalar> DecoupleModel<S> {
    pub fn new(role: Role, shape: &ModelShape, use_kind: bool, seed: u64) -> Result<Self> {
        let vocab = if use_kind { UNKNOWN_KIND + 1 } else { 0 };
        let denoiser = Denoiser::new(shape.spec(6, vocab), seed)?;
        Ok(Self { role, denoiser, schedule: NoiseSchedule::default(), use_kind })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Meta { role: self.role, spec: self.denoiser.spec().clone(), schedule: self.schedule.clone(), use_kind: self.use_kind };
        save_checkpoint(path, self.role.name(), serde_json::to_value(meta)?, self.denoiser.params())
    }

    /// Loads a checkpoint, failing if it holds a different role.
    pub fn load(path: &Path, role: Role) -> Result<Self> {
        let (header, params) = load_checkpoint::<S>(path)?;
        let meta: Meta = serde_json::from_value(header.meta)?;
        if meta.role != role {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} model, expected {}",
                path.display(),
                meta.role.name(),
                role.name()
            )));
        }
        Ok(Self { role, denoiser: Denoiser::from_params(meta.spec, params)?, schedule: meta.schedule.rebuilt()?, use_kind: meta.use_kind })
    }

    pub fn digest(&self) -> String {
        self.denoiser.params().digest()
    }

    fn class_ids(&self, kinds: Option<&[Option<LightKind>]>, n: usize) -> Option<Vec<usize>> {
        self.use_kind.then(|| match kinds {
            Some(k) => k.iter().map(|k| k.map_or(UNKNOWN_KIND, LightKind::index)).collect(),
            None => vec![UNKNOWN_KIND; n],
        })
    }

    fn sample(&self, images: &[&Image<S>], class: Option<Vec<usize>>, n_steps: usize, seeds: &[u64]) -> Result<Vec<Image<S>>> {
        let cond = Conditioning::new(to_model_space(images)?).with_class(class);
        let out = ddim_sample(&ModelRef::base(&self.denoiser), &cond, n_steps, &self.schedule, seeds)?;
        from_model_space(&out)
    }
}

fn expect_role<S>(model: &DecoupleModel<S>, role: Role) -> Result<()> {
    if model.role == role {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("a {} model was given where {} is needed", model.role.name(), role.name())))
    }
}

pub fn remove_light_batch<S: Scalar>(model: &DecoupleModel<S>, images: &[&Image<S>], n_steps: usize, seeds: &[u64]) -> Result<Vec<Image<S>>> {
    expect_role(model, Role::Removal)?;
    model.sample(images, None, n_steps, seeds)
}

pub fn remove_light<S: Scalar>(model: &DecoupleModel<S>, image: &Image<S>, n_steps: usize, seed: u64) -> Result<Image<S>> {
    Ok(remove_light_batch(model, &[image], n_steps, &[seed])?.remove(0))
}

pub fn extract_light_batch<S: Scalar>(
    model: &DecoupleModel<S>,
    images: &[&Image<S>],
    kinds: Option<&[Option<LightKind>]>,
    n_steps: usize,
    seeds: &[u64],
) -> Result<Vec<LightImage<S>>> {
    expect_role(model, Role::Extraction)?;
    if kinds.is_some_and(|k| k.len() != images.len()) {
        return Err(Error::dims("one kind per image is required"));
    }
    let class = model.class_ids(kinds, images.len());
    Ok(model.sample(images, class, n_steps, seeds)?.into_iter().map(LightImage::from_image).collect())
}

pub fn extract_light<S: Scalar>(
    model: &DecoupleModel<S>,
    image: &Image<S>,
    kind: Option<LightKind>,
    n_steps: usize,
    seed: u64,
) -> Result<LightImage<S>> {
    Ok(extract_light_batch(model, &[image], Some(&[kind]), n_steps, &[seed])?.remove(0))
}

fn check_corpus<S>(corpus: &Corpus<S>, split: &Split) -> Result<()> {
    if split.train_scenes.is_empty() || split.train_lights.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if split.test_scenes.end > corpus.scenes.len() || split.test_lights.end > corpus.lights.len() {
        return Err(Error::dims("split does not fit the corpus"));
    }
    Ok(())
}

pub fn train_removal<S: Scalar>(
    corpus: &Corpus<S>,
    split: &Split,
    shape: &ModelShape,
    cfg: &RemovalTrainConfig,
    on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(DecoupleModel<S>, Vec<f64>)> {
    cfg.validate()?;
    check_corpus(corpus, split)?;
    let mut model = DecoupleModel::new(Role::Removal, shape, false, cfg.seed ^ 0x2e40)?;
    let schedule = model.schedule.clone();
    let make = |rng: &mut ChaCha8Rng, bs: usize| -> Result<Batch<S>> {
        let mut inputs = Vec::with_capacity(bs);
        let mut targets = Vec::with_capacity(bs);
        for _ in 0..bs {
            let s = rng.gen_range(split.train_scenes.clone());
            let l = rng.gen_range(split.train_lights.clone());
            let p = make_removal_pair(&corpus.scenes[s], &corpus.masks[s], &corpus.lights[l], cfg.synth_mix, rng)?;
            inputs.push(p.input);
            targets.push(p.target);
        }
        let cond = to_model_space(&inputs.iter().collect::<Vec<_>>())?;
        let x0 = to_model_space(&targets.iter().collect::<Vec<_>>())?;
        Ok(Batch { x0, cond: Conditioning::new(cond) })
    };
    let losses = train(Trainable::Base(&mut model.denoiser), &cfg.optim(), &schedule, make, on_log)?;
    Ok((model, losses))
}

pub fn train_extraction<S: Scalar>(
    corpus: &Corpus<S>,
    split: &Split,
    shape: &ModelShape,
    cfg: &ExtractionTrainConfig,
    on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(DecoupleModel<S>, Vec<f64>)> {
    cfg.validate()?;
    check_corpus(corpus, split)?;
    let mut model = DecoupleModel::new(Role::Extraction, shape, cfg.use_kind_conditioning, cfg.seed ^ 0xe874)?;
    let schedule = model.schedule.clone();
    let use_kind = cfg.use_kind_conditioning;
    let make = |rng: &mut ChaCha8Rng, bs: usize| -> Result<Batch<S>> {
        let mut inputs = Vec::with_capacity(bs);
        let mut targets = Vec::with_capacity(bs);
        let mut class = Vec::with_capacity(bs);
        for _ in 0..bs {
            let s = rng.gen_range(split.train_scenes.clone());
            let l = rng.gen_range(split.train_lights.clone());
            let p = make_extraction_pair(&corpus.scenes[s], &corpus.masks[s], &corpus.lights[l], rng)?;
            inputs.push(p.input);
            targets.push(p.target.into_image());
            class.push(if rng.gen_bool(KIND_DROPOUT) { UNKNOWN_KIND } else { corpus.light_kind(l).index() });
        }
        Ok(Batch {
            x0: to_model_space(&targets.iter().collect::<Vec<_>>())?,
            cond: Conditioning::new(to_model_space(&inputs.iter().collect::<Vec<_>>())?).with_class(use_kind.then_some(class)),
        })
    };
    let losses = train(Trainable::Base(&mut model.denoiser), &cfg.optim(), &schedule, make, on_log)?;
    Ok((model, losses))
}
