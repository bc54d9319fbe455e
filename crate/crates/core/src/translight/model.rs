use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diffusion::{
    apply_adapter, ddim_sample, from_model_space, to_model_space, Conditioning, ControlBranch, Denoiser, DenoiserSpec,
    LowRankAdapter, ModelRef, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, read_json, sha256_file, write_json};
use crate::imagecore::{apply_transform, composite, mask_background_light, Image, LightImage, LightTransform, Mask, SynthesisParams};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

/// One transfer: place `light` (after `transform`) onto `content`.
#[derive(Clone, Debug)]
pub struct TransferRequest<S> {
    pub content: Image<S>,
    pub light: LightImage<S>,
    pub transform: LightTransform,
    pub fg_mask: Option<Mask>,
    pub n_steps: usize,
    pub seed: u64,
}

impl<S: Scalar> TransferRequest<S> {
    pub fn new(content: Image<S>, light: LightImage<S>) -> Self {
        Self { content, light, transform: LightTransform::IDENTITY, fg_mask: None, n_steps: DEFAULT_SAMPLING_STEPS, seed: 0 }
    }

    /// Transformed light, its directly added part, and the model condition.
    pub fn prepare(&self) -> Result<(LightImage<S>, Image<S>)> {
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be >= 1"));
        }
        let moved = apply_transform(&self.light, &self.transform)?;
        self.content.ensure_same_dims(moved.as_image(), "transformed light")?;
        let added = match &self.fg_mask {
            Some(m) => mask_background_light(&moved, m)?,
            None => moved.clone(),
        };
        let cond = composite(&self.content, &added, SynthesisParams::UNIT)?;
        Ok((moved, cond))
    }
}

/// Frozen base denoiser with optional stage-1 adapter and stage-2 branch.
#[derive(Clone, Debug)]
pub struct TransLight<S> {
    pub base: Denoiser<S>,
    pub adapter: Option<LowRankAdapter<S>>,
    pub control: Option<ControlBranch<S>>,
    pub schedule: NoiseSchedule,
}

impl<S: Scalar> TransLight<S> {
    pub fn new(base: Denoiser<S>) -> Self {
        Self { base, adapter: None, control: None, schedule: NoiseSchedule::default() }
    }

    /// Base weights with the adapter merged in, if any.
    pub fn effective_weights(&self) -> Result<ParamSet<S>> {
        match &self.adapter {
            Some(a) => apply_adapter(self.base.params(), a),
            None => Ok(self.base.params().clone()),
        }
    }

    /// Samples one output per condition, feeding `controls` to the branch.
    pub fn generate(&self, conds: &[&Image<S>], controls: &[&LightImage<S>], n_steps: usize, seeds: &[u64]) -> Result<Vec<Image<S>>> {
        if controls.len() != conds.len() {
            return Err(Error::dims("one control light per condition is required"));
        }
        let weights = self.effective_weights()?;
        let mut model = ModelRef::with_weights(&self.base, &weights);
        let mut c = Conditioning::new(to_model_space(conds)?);
        if let Some(branch) = &self.control {
            model = model.with_control(branch);
            c = c.with_control(Some(to_model_space(&controls.iter().map(|l| l.as_image()).collect::<Vec<_>>())?));
        }
        let x = ddim_sample(&model, &c, n_steps, &self.schedule, seeds)?;
        from_model_space(&x)
    }

    pub fn transfer(&self, req: &TransferRequest<S>) -> Result<Image<S>> {
        Ok(self.transfer_batch(std::slice::from_ref(req))?.remove(0))
    }

    /// Requests must share `n_steps`.
    pub fn transfer_batch(&self, reqs: &[TransferRequest<S>]) -> Result<Vec<Image<S>>> {
        let Some(first) = reqs.first() else { return Ok(Vec::new()) };
        if reqs.iter().any(|r| r.n_steps != first.n_steps) {
            return Err(Error::invalid("batched requests must share n_steps"));
        }
        let prepared = reqs.iter().map(TransferRequest::prepare).collect::<Result<Vec<_>>>()?;
        let conds: Vec<&Image<S>> = prepared.iter().map(|p| &p.1).collect();
        let lights: Vec<&LightImage<S>> = prepared.iter().map(|p| &p.0).collect();
        let seeds: Vec<u64> = reqs.iter().map(|r| r.seed).collect();
        self.generate(&conds, &lights, first.n_steps, &seeds)
    }

    /// Writes `base/`, `adapter/`, `control/` and `bundle.json` under `dir`.
    pub fn save_bundle(&self, dir: &Path, configs: serde_json::Value) -> Result<BundleManifest> {
        let mut m = BundleManifest { base: String::new(), adapter: None, control: None, configs };
        let base = bundle_path(dir, "base");
        create_dir_all(base.parent().expect("bundle paths have a parent"))?;
        save_base(&base, &self.base, &self.schedule)?;
        m.base = sha256_file(&base)?;
        if let Some(a) = &self.adapter {
            let p = bundle_path(dir, "adapter");
            create_dir_all(p.parent().expect("bundle paths have a parent"))?;
            save_adapter(&p, a, &self.base)?;
            m.adapter = Some(sha256_file(&p)?);
        }
        if let Some(c) = &self.control {
            let p = bundle_path(dir, "control");
            create_dir_all(p.parent().expect("bundle paths have a parent"))?;
            save_control(&p, c, &self.base)?;
            m.control = Some(sha256_file(&p)?);
        }
        write_json(&dir.join(BUNDLE_FILE), &m)?;
        Ok(m)
    }

    /// Loads a bundle, verifying every recorded checkpoint hash.
    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let m: BundleManifest = read_json(&dir.join(BUNDLE_FILE))?;
        let verify = |name: &str, want: &str| -> Result<PathBuf> {
            let p = bundle_path(dir, name);
            let got = sha256_file(&p)?;
            if got != want {
                return Err(Error::Checkpoint(format!("{} hash {got} does not match bundle record {want}", p.display())));
            }
            Ok(p)
        };
        let (base, schedule) = load_base(&verify("base", &m.base)?)?;
        let adapter = m.adapter.as_deref().map(|h| load_adapter(&verify("adapter", h)?, &base)).transpose()?;
        let control = m.control.as_deref().map(|h| load_control(&verify("control", h)?, &base)).transpose()?;
        Ok(Self { base, adapter, control, schedule })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    /// SHA-256 of each checkpoint file.
    pub base: String,
    pub adapter: Option<String>,
    pub control: Option<String>,
    pub configs: serde_json::Value,
}

pub fn bundle_path(dir: &Path, part: &str) -> PathBuf {
    dir.join(part).join(format!("{part}.ckpt"))
}

#[derive(Serialize, Deserialize)]
struct BaseMeta {
    spec: DenoiserSpec,
    schedule: NoiseSchedule,
}

#[derive(Serialize, Deserialize)]
struct AdapterMeta {
    rank: usize,
    scale: f64,
    base_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ControlMeta {
    spec: DenoiserSpec,
    control_channels: usize,
    base_digest: String,
}

pub fn save_base<S: Scalar>(path: &Path, base: &Denoiser<S>, schedule: &NoiseSchedule) -> Result<()> {
    let meta = BaseMeta { spec: base.spec().clone(), schedule: schedule.clone() };
    save_checkpoint(path, "base", serde_json::to_value(meta)?, base.params())
}

pub fn load_base<S: Scalar>(path: &Path) -> Result<(Denoiser<S>, NoiseSchedule)> {
    let (h, params) = load_checkpoint::<S>(path)?;
    expect_kind(path, &h.kind, "base")?;
    let meta: BaseMeta = serde_json::from_value(h.meta)?;
    Ok((Denoiser::from_params(meta.spec, params)?, meta.schedule.rebuilt()?))
}

pub fn save_adapter<S: Scalar>(path: &Path, adapter: &LowRankAdapter<S>, base: &Denoiser<S>) -> Result<()> {
    let meta = AdapterMeta { rank: adapter.rank(), scale: adapter.scale(), base_digest: base.params().digest() };
    save_checkpoint(path, "adapter", serde_json::to_value(meta)?, adapter.params())
}

/// Fails unless the adapter was trained on exactly this base.
pub fn load_adapter<S: Scalar>(path: &Path, base: &Denoiser<S>) -> Result<LowRankAdapter<S>> {
    let (h, params) = load_checkpoint::<S>(path)?;
    expect_kind(path, &h.kind, "adapter")?;
    let meta: AdapterMeta = serde_json::from_value(h.meta)?;
    expect_base(path, &meta.base_digest, base)?;
    LowRankAdapter::from_params(base, meta.rank, meta.scale, params)
}

pub fn save_control<S: Scalar>(path: &Path, branch: &ControlBranch<S>, base: &Denoiser<S>) -> Result<()> {
    let meta = ControlMeta { spec: branch.spec().clone(), control_channels: branch.control_channels(), base_digest: base.params().digest() };
    save_checkpoint(path, "control", serde_json::to_value(meta)?, branch.params())
}

pub fn load_control<S: Scalar>(path: &Path, base: &Denoiser<S>) -> Result<ControlBranch<S>> {
    let (h, params) = load_checkpoint::<S>(path)?;
    expect_kind(path, &h.kind, "control")?;
    let meta: ControlMeta = serde_json::from_value(h.meta)?;
    expect_base(path, &meta.base_digest, base)?;
    ControlBranch::from_params(meta.spec, meta.control_channels, params)
}

fn expect_kind(path: &Path, got: &str, want: &str) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("{} holds a {got} checkpoint, expected {want}", path.display())))
    }
}

fn expect_base<S: Scalar>(path: &Path, digest: &str, base: &Denoiser<S>) -> Result<()> {
    if digest == base.params().digest() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("{} was trained on a different base model", path.display())))
    }
}
