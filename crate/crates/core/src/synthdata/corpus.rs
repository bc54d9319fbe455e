//! On-disk corpus of scenes, masks and lights with a reproducing manifest.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::light::{gen_light_material, LightKind, LightSpec};
use super::scene::{gen_content_scene, SceneSpec};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, read_json, write_json};
use crate::imagecore::{load_image, load_light, load_mask, save_image, save_light, save_mask, Image, LightImage, Mask};
use crate::scalar::Scalar;

pub const CORPUS_VERSION: &str = "lightfx-corpus/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub spec: SceneSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightEntry {
    pub id: String,
    pub spec: LightSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub resolution: usize,
    pub scenes: Vec<SceneEntry>,
    pub lights: Vec<LightEntry>,
}

impl Manifest {
    /// Specs for a corpus, drawn from one master seed.
    pub fn plan(n_scenes: usize, n_lights: usize, seed: u64, resolution: usize) -> Result<Self> {
        if n_scenes == 0 || n_lights == 0 {
            return Err(Error::invalid("corpus needs at least one scene and one light"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes = (0..n_scenes)
            .map(|i| SceneEntry { id: format!("s{i:05}"), spec: SceneSpec::random(rng.gen(), resolution) })
            .collect();
        let lights = (0..n_lights)
            .map(|i| {
                let kind = LightKind::ALL[rng.gen_range(0..LightKind::ALL.len())];
                LightEntry { id: format!("l{i:05}"), spec: LightSpec::random(rng.gen(), kind, resolution) }
            })
            .collect();
        Ok(Self { version: CORPUS_VERSION.to_string(), seed, resolution, scenes, lights })
    }
}

pub fn scene_path(root: &Path, id: &str) -> PathBuf {
    root.join("scenes").join(format!("{id}.png"))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.png"))
}

pub fn light_path(root: &Path, id: &str) -> PathBuf {
    root.join("lights").join(format!("{id}.png"))
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

/// Renders every spec in `manifest` under `root`.
pub fn write_corpus(root: &Path, manifest: &Manifest) -> Result<()> {
    for dir in ["scenes", "masks", "lights"] {
        create_dir_all(&root.join(dir))?;
    }
    for e in &manifest.scenes {
        let (img, mask) = gen_content_scene::<f64>(&e.spec)?;
        save_image(&scene_path(root, &e.id), &img)?;
        save_mask(&mask_path(root, &e.id), &mask)?;
    }
    for e in &manifest.lights {
        save_light(&light_path(root, &e.id), &gen_light_material::<f64>(&e.spec)?)?;
    }
    write_json(&manifest_path(root), manifest)
}

pub fn gen_corpus(root: &Path, n_scenes: usize, n_lights: usize, seed: u64, resolution: usize) -> Result<Manifest> {
    let manifest = Manifest::plan(n_scenes, n_lights, seed, resolution)?;
    write_corpus(root, &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(&manifest_path(root))?;
    if m.version != CORPUS_VERSION {
        return Err(Error::Parse {
            path: manifest_path(root),
            message: format!("unsupported corpus version {:?}", m.version),
        });
    }
    Ok(m)
}

/// A corpus held in memory, as decoded from its PNG files.
#[derive(Clone, Debug)]
pub struct Corpus<S> {
    pub manifest: Manifest,
    pub scenes: Vec<Image<S>>,
    pub masks: Vec<Mask>,
    pub lights: Vec<LightImage<S>>,
}

impl<S: Scalar> Corpus<S> {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = read_manifest(root)?;
        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        let mut masks = Vec::with_capacity(manifest.scenes.len());
        for e in &manifest.scenes {
            scenes.push(load_image(&scene_path(root, &e.id))?);
            masks.push(load_mask(&mask_path(root, &e.id))?);
        }
        let lights = manifest.lights.iter().map(|e| load_light(&light_path(root, &e.id))).collect::<Result<_>>()?;
        Ok(Self { manifest, scenes, masks, lights })
    }

    /// Renders directly from specs without touching disk.
    pub fn render(manifest: Manifest) -> Result<Self> {
        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        let mut masks = Vec::with_capacity(manifest.scenes.len());
        for e in &manifest.scenes {
            let (img, mask) = gen_content_scene(&e.spec)?;
            scenes.push(img);
            masks.push(mask);
        }
        let lights = manifest.lights.iter().map(|e| gen_light_material(&e.spec)).collect::<Result<_>>()?;
        Ok(Self { manifest, scenes, masks, lights })
    }

    pub fn light_kind(&self, i: usize) -> LightKind {
        self.manifest.lights[i].spec.kind
    }
}
