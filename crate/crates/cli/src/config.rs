//! Run configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use lightfx_core::decouple::{ExtractionTrainConfig, ModelShape, RemovalTrainConfig};
use lightfx_core::evalkit::SuccessCriteria;
use lightfx_core::translight::{BaseConfig, Stage1Config, Stage2Config};
use lightfx_core::triplets::{EmbedderSpec, TripletConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Every artifact of the run lives under this directory.
    pub out_dir: PathBuf,
    pub seed: u64,
    pub resolution: usize,
    pub data: DataConfig,
    pub model: ModelShape,
    pub removal: RemovalTrainConfig,
    pub extraction: ExtractionTrainConfig,
    pub embedder: EmbedderConfig,
    pub triplets: TripletsConfig,
    pub base: BaseConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub lights: usize,
    /// Fraction of scene and light ids held out from decoupling training.
    pub holdout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub width: usize,
    pub dim: usize,
    /// Corpus images drawn for training.
    pub images: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletsConfig {
    /// Lit images synthesized from the corpus as pipeline input.
    pub sources: usize,
    pub gamma: f64,
    pub selection_threshold: f64,
    pub reremoval_threshold: f64,
    pub sampling_steps: usize,
    pub batch_size: usize,
}

impl TripletsConfig {
    pub fn filter(&self, seed: u64) -> TripletConfig {
        TripletConfig {
            gamma: self.gamma,
            selection_threshold: self.selection_threshold,
            reremoval_threshold: self.reremoval_threshold,
            sampling_steps: self.sampling_steps,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out composites for the decoupling checks.
    pub decouple_samples: usize,
    pub sampling_steps: usize,
    pub batch_size: usize,
    /// Fraction of triplets held out from transfer training.
    pub triplet_holdout: f64,
    /// Also train the transfer model without the stage-1 adapter.
    pub ablation: bool,
    pub criteria: SuccessCriteria,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = cfg;
        if cfg.out_dir.is_relative() {
            cfg.out_dir = path.parent().unwrap_or(Path::new(".")).join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        if self.resolution < 16 || self.resolution % 8 != 0 {
            return bad(format!("resolution {} must be a multiple of 8 and at least 16", self.resolution));
        }
        if self.data.scenes == 0 || self.data.lights == 0 {
            return bad("data.scenes and data.lights must be positive".into());
        }
        for (name, v) in [("data.holdout", self.data.holdout), ("eval.triplet_holdout", self.eval.triplet_holdout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1)"));
            }
        }
        let checks = [
            ("removal", self.removal.validate()),
            ("extraction", self.extraction.validate()),
            ("triplets", self.triplets.filter(self.seed).validate()),
            ("base", self.base.optim().validate()),
            ("stage1", self.stage1.validate()),
            ("stage2", self.stage2.optim().validate()),
            ("embedder", self.embedder_spec().validate()),
        ];
        for (name, r) in checks {
            if let Err(e) = r {
                return bad(format!("[{name}] {e}"));
            }
        }
        let c = &self.eval.criteria;
        if [c.content_saliency_max, c.dark_threshold, c.dark_mean_max].iter().any(|v| !(0.0..=1.0).contains(v)) || !(-1.0..=1.0).contains(&c.correlation_min) {
            return bad("eval.criteria thresholds out of range".into());
        }
        if self.eval.sampling_steps == 0 || self.eval.batch_size == 0 || self.eval.decouple_samples == 0 {
            return bad("eval.sampling_steps, eval.batch_size and eval.decouple_samples must be positive".into());
        }
        if self.embedder.images < lightfx_core::triplets::MIN_TRAIN_IMAGES {
            return bad(format!("embedder.images must be at least {}", lightfx_core::triplets::MIN_TRAIN_IMAGES));
        }
        Ok(())
    }

    pub fn embedder_spec(&self) -> EmbedderSpec {
        EmbedderSpec { resolution: self.resolution, width: self.embedder.width, dim: self.embedder.dim }
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal, falling
/// back to a plain string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, p) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| CliError::Config(format!("override {key}: {p} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), value);
            return Ok(());
        }
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(CliError::Config(format!("override {spec:?} has an empty key")))
}
