//! Selection, generation and similarity filtering of image/content/light
//! triplets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedder::{cosine, Embedder};
use super::saliency::light_saliency;
use crate::decouple::{extract_light_batch, remove_light_batch, DecoupleModel};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, write_atomic, write_json};
use crate::imagecore::{composite, encode_image, encode_mask, load_image, load_light, load_mask, Image, LightImage, Mask, SynthesisParams};
use crate::scalar::Scalar;
use crate::synthdata::LightKind;

pub const DEFAULT_GAMMA: f64 = 0.98;

/// Keep a candidate iff recomposition is closer to the input than the
/// content alone, and the content is far enough from the input.
pub fn filter_check(cos_alpha: f64, cos_beta: f64, gamma: f64) -> bool {
    cos_beta > cos_alpha && cos_alpha < gamma
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub cos_alpha: f64,
    pub cos_beta: f64,
    pub gamma: f64,
    pub passed: bool,
}

impl FilterDecision {
    pub fn evaluate(cos_alpha: f64, cos_beta: f64, gamma: f64) -> Self {
        Self { cos_alpha, cos_beta, gamma, passed: filter_check(cos_alpha, cos_beta, gamma) }
    }

    /// Failure reason, or `"passed"`.
    pub fn reason(&self) -> &'static str {
        match (self.cos_beta > self.cos_alpha, self.cos_alpha < self.gamma) {
            (true, true) => "passed",
            (false, true) => "recomposition_not_closer",
            (true, false) => "removal_insufficient",
            (false, false) => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    pub gamma: f64,
    /// Minimum saliency for an image to enter generation.
    pub selection_threshold: f64,
    /// Content saliency above this triggers one more removal pass.
    pub reremoval_threshold: f64,
    pub sampling_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, selection_threshold: 0.15, reremoval_threshold: 0.12, sampling_steps: 20, batch_size: 16, seed: 0 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        for (name, v) in [("selection_threshold", self.selection_threshold), ("reremoval_threshold", self.reremoval_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.sampling_steps == 0 || self.batch_size == 0 {
            return Err(Error::invalid("sampling_steps and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Removal and extraction back ends.
pub trait Decoupler<S> {
    fn remove(&self, images: &[&Image<S>], seeds: &[u64]) -> Result<Vec<Image<S>>>;
    fn extract(&self, images: &[&Image<S>], kinds: &[Option<LightKind>], seeds: &[u64]) -> Result<Vec<LightImage<S>>>;
    /// Identifiers recorded as provenance.
    fn checkpoint_ids(&self) -> BTreeMap<String, String>;
}

pub struct ModelDecoupler<'a, S> {
    pub removal: &'a DecoupleModel<S>,
    pub extraction: &'a DecoupleModel<S>,
    pub n_steps: usize,
}

impl<S: Scalar> Decoupler<S> for ModelDecoupler<'_, S> {
    fn remove(&self, images: &[&Image<S>], seeds: &[u64]) -> Result<Vec<Image<S>>> {
        remove_light_batch(self.removal, images, self.n_steps, seeds)
    }

    fn extract(&self, images: &[&Image<S>], kinds: &[Option<LightKind>], seeds: &[u64]) -> Result<Vec<LightImage<S>>> {
        extract_light_batch(self.extraction, images, Some(kinds), self.n_steps, seeds)
    }

    fn checkpoint_ids(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("removal".into(), self.removal.digest()), ("extraction".into(), self.extraction.digest())])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSeeds {
    pub removal: u64,
    pub reremoval: u64,
    pub extraction: u64,
}

impl TripletSeeds {
    /// Seeds for the `index`-th source image of a run.
    pub fn derive(run_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        rng.set_stream(index);
        Self { removal: rng.next_u64(), reremoval: rng.next_u64(), extraction: rng.next_u64() }
    }
}

/// Decoupling result for one image, before the accept/reject decision.
#[derive(Clone, Debug)]
pub struct Candidate<S> {
    pub content: Image<S>,
    pub light: LightImage<S>,
    pub reremoved: bool,
    pub decision: FilterDecision,
    pub seeds: TripletSeeds,
}

/// Decouples a batch of images and scores each result.
pub fn build_candidates<S: Scalar>(
    dec: &dyn Decoupler<S>,
    e: &Embedder<S>,
    images: &[&Image<S>],
    kinds: &[Option<LightKind>],
    seeds: &[TripletSeeds],
    cfg: &TripletConfig,
) -> Result<Vec<Candidate<S>>> {
    if kinds.len() != images.len() || seeds.len() != images.len() {
        return Err(Error::dims("one kind and one seed set per image are required"));
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let mut content = dec.remove(images, &seeds.iter().map(|s| s.removal).collect::<Vec<_>>())?;
    let redo: Vec<usize> = (0..content.len()).filter(|&i| light_saliency(&content[i]) > cfg.reremoval_threshold).collect();
    if !redo.is_empty() {
        let again = dec.remove(&redo.iter().map(|&i| &content[i]).collect::<Vec<_>>(), &redo.iter().map(|&i| seeds[i].reremoval).collect::<Vec<_>>())?;
        for (&i, c) in redo.iter().zip(again) {
            content[i] = c;
        }
    }
    let light = dec.extract(images, kinds, &seeds.iter().map(|s| s.extraction).collect::<Vec<_>>())?;
    let unit = SynthesisParams::new(1.0, 1.0)?;
    let recomposed = content.iter().zip(&light).map(|(c, l)| composite(c, l, unit)).collect::<Result<Vec<_>>>()?;
    let n = images.len();
    let mut batch: Vec<&Image<S>> = images.to_vec();
    batch.extend(content.iter());
    batch.extend(recomposed.iter());
    let emb = e.embed_batch(&batch)?;
    Ok(content
        .into_iter()
        .zip(light)
        .enumerate()
        .map(|(i, (content, light))| {
            let decision = FilterDecision::evaluate(cosine(&emb[i], &emb[n + i]), cosine(&emb[i], &emb[2 * n + i]), cfg.gamma);
            Candidate { content, light, reremoved: redo.contains(&i), decision, seeds: seeds[i] }
        })
        .collect())
}

pub fn build_triplet<S: Scalar>(
    dec: &dyn Decoupler<S>,
    e: &Embedder<S>,
    image: &Image<S>,
    kind: Option<LightKind>,
    seeds: TripletSeeds,
    cfg: &TripletConfig,
) -> Result<Candidate<S>> {
    Ok(build_candidates(dec, e, &[image], &[kind], &[seeds], cfg)?.remove(0))
}

/// An image entering the pipeline.
#[derive(Clone, Debug)]
pub struct SourceImage<S> {
    pub id: String,
    pub image: Image<S>,
    pub kind: Option<LightKind>,
    /// Foreground objects; absent means the whole frame is background.
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub kind: Option<LightKind>,
    pub cos_alpha: f64,
    pub cos_beta: f64,
    pub gamma: f64,
    pub passed: bool,
    pub reremoved: bool,
    pub seeds: TripletSeeds,
    pub checkpoints: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Triplet<S> {
    pub record: TripletRecord,
    pub image_with_light: Image<S>,
    pub content: Image<S>,
    pub light: LightImage<S>,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, counts: vec![0; bins] }
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let pos = ((v - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        self.counts[(pos.max(0.0) as usize).min(bins - 1)] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub sources: usize,
    pub selected: usize,
    pub generated: usize,
    pub accepted: usize,
    pub filtered_out: usize,
    pub reremoved: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub counts: PipelineCounts,
    pub cos_alpha: Histogram,
    pub cos_beta: Histogram,
    pub reasons: BTreeMap<String, usize>,
}

pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const REJECTED_FILE: &str = "rejected.jsonl";
pub const REPORT_FILE: &str = "pipeline_report.json";

pub fn raster_path(root: &Path, layer: &str, id: &str) -> PathBuf {
    root.join(layer).join(format!("{id}.png"))
}

/// Runs selection, generation and filtering over `sources` and writes the
/// accepted triplets under `root`. Rejected candidates go to `rejected/`
/// so that filtered and unfiltered populations can both be evaluated.
pub fn run_pipeline<S: Scalar>(
    sources: &[SourceImage<S>],
    dec: &dyn Decoupler<S>,
    e: &Embedder<S>,
    cfg: &TripletConfig,
    root: &Path,
) -> Result<PipelineReport> {
    cfg.validate()?;
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = sources.iter().find(|s| !ids.insert(s.id.as_str())) {
        return Err(Error::invalid(format!("duplicate source id {}", dup.id)));
    }
    for layer in ["image", "content", "light", "mask", "rejected/content", "rejected/light"] {
        create_dir_all(&root.join(layer))?;
    }
    let mut ckpts = dec.checkpoint_ids();
    ckpts.insert("embedder".into(), e.digest());

    let selected: Vec<usize> = (0..sources.len()).filter(|&i| light_saliency(&sources[i].image) >= cfg.selection_threshold).collect();
    let mut report = PipelineReport {
        counts: PipelineCounts { sources: sources.len(), selected: selected.len(), generated: 0, accepted: 0, filtered_out: 0, reremoved: 0 },
        cos_alpha: Histogram::new(-1.0, 1.0, 40),
        cos_beta: Histogram::new(-1.0, 1.0, 40),
        reasons: BTreeMap::new(),
    };
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for chunk in selected.chunks(cfg.batch_size) {
        let images: Vec<&Image<S>> = chunk.iter().map(|&i| &sources[i].image).collect();
        let kinds: Vec<Option<LightKind>> = chunk.iter().map(|&i| sources[i].kind).collect();
        let seeds: Vec<TripletSeeds> = chunk.iter().map(|&i| TripletSeeds::derive(cfg.seed, i as u64)).collect();
        for (&i, cand) in chunk.iter().zip(build_candidates(dec, e, &images, &kinds, &seeds, cfg)?) {
            let src = &sources[i];
            let d = cand.decision;
            report.counts.generated += 1;
            report.counts.reremoved += usize::from(cand.reremoved);
            report.cos_alpha.add(d.cos_alpha);
            report.cos_beta.add(d.cos_beta);
            *report.reasons.entry(d.reason().to_string()).or_default() += 1;
            let record = TripletRecord {
                id: src.id.clone(),
                kind: src.kind,
                cos_alpha: d.cos_alpha,
                cos_beta: d.cos_beta,
                gamma: d.gamma,
                passed: d.passed,
                reremoved: cand.reremoved,
                seeds: cand.seeds,
                checkpoints: ckpts.clone(),
            };
            if d.passed {
                let mask = src.mask.clone().unwrap_or_else(|| Mask::filled(src.image.height(), src.image.width(), false));
                write_atomic(&raster_path(root, "image", &src.id), &encode_image(&src.image)?)?;
                write_atomic(&raster_path(root, "content", &src.id), &encode_image(&cand.content)?)?;
                write_atomic(&raster_path(root, "light", &src.id), &encode_image(cand.light.as_image())?)?;
                write_atomic(&raster_path(root, "mask", &src.id), &encode_mask(&mask)?)?;
                accepted.push(record);
            } else {
                write_atomic(&raster_path(root, "rejected/content", &src.id), &encode_image(&cand.content)?)?;
                write_atomic(&raster_path(root, "rejected/light", &src.id), &encode_image(cand.light.as_image())?)?;
                rejected.push(record);
            }
        }
    }
    report.counts.accepted = accepted.len();
    report.counts.filtered_out = rejected.len();
    write_jsonl(&root.join(TRIPLETS_FILE), &accepted)?;
    write_jsonl(&root.join(REJECTED_FILE), &rejected)?;
    write_json(&root.join(REPORT_FILE), &report)?;
    Ok(report)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

pub fn read_records(path: &Path) -> Result<Vec<TripletRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|err| Error::Parse { path: path.to_path_buf(), message: format!("line {}: {err}", n + 1) })
        })
        .collect()
}

/// Loads every accepted triplet of a dataset written by [`run_pipeline`].
pub fn load_triplets<S: Scalar>(root: &Path) -> Result<Vec<Triplet<S>>> {
    read_records(&root.join(TRIPLETS_FILE))?
        .into_iter()
        .map(|record| {
            if !record.passed {
                return Err(Error::invalid(format!("triplet {} is stored without a passing decision", record.id)));
            }
            let image_with_light = load_image(&raster_path(root, "image", &record.id))?;
            let content = load_image(&raster_path(root, "content", &record.id))?;
            let light = load_light(&raster_path(root, "light", &record.id))?;
            let mask = load_mask(&raster_path(root, "mask", &record.id))?;
            image_with_light.ensure_same_dims(&content, "triplet content")?;
            image_with_light.ensure_same_dims(light.as_image(), "triplet light")?;
            if mask.dims() != image_with_light.dims() {
                return Err(Error::dims(format!("triplet {} mask has the wrong size", record.id)));
            }
            Ok(Triplet { record, image_with_light, content, light, mask })
        })
        .collect()
}
