//! Compact convolutional autoencoder whose bottleneck serves as an image
//! embedding for similarity filtering and Light FID.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diffusion::to_model_space;
use crate::error::{Error, Result};
use crate::evalkit::Embed;
use crate::imagecore::{composite, mask_background_light, Image, SynthesisParams};
use crate::synthdata::Corpus;
use crate::nn::fm::{avg_pool2, avg_pool2_backward, silu, silu_backward, upsample2, upsample2_backward};
use crate::nn::{AdamW, Conv, ConvCache, Fm, Grads, Init, Linear, ParamSet};
use crate::scalar::Scalar;
use crate::training::{LogRecord, OptimConfig};

pub const MIN_TRAIN_IMAGES: usize = 1000;
const STAGES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    pub resolution: usize,
    pub width: usize,
    pub dim: usize,
}

impl EmbedderSpec {
    fn widths(&self) -> [usize; STAGES] {
        [self.width, 2 * self.width, 2 * self.width]
    }

    fn bottleneck_side(&self) -> usize {
        self.resolution >> STAGES
    }

    fn flat(&self) -> usize {
        self.widths()[STAGES - 1] * self.bottleneck_side().pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution % (1 << STAGES) != 0 || self.resolution < 8 {
            return Err(Error::invalid(format!("embedder resolution {} must be a multiple of 8", self.resolution)));
        }
        if self.width == 0 || self.dim == 0 {
            return Err(Error::invalid("embedder width and dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Arch {
    enc: Vec<Conv>,
    to_z: Linear,
    from_z: Linear,
    dec: Vec<Conv>,
}

impl Arch {
    fn build<S: Scalar>(spec: &EmbedderSpec, ps: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Self {
        let w = spec.widths();
        let enc = (0..STAGES)
            .map(|i| Conv::new(ps, &format!("enc{i}"), if i == 0 { 3 } else { w[i - 1] }, w[i], 3, Init::Scaled(1.0), rng))
            .collect();
        let to_z = Linear::new(ps, "to_z", spec.flat(), spec.dim, Init::Scaled(1.0), rng);
        let from_z = Linear::new(ps, "from_z", spec.dim, spec.flat(), Init::Scaled(1.0), rng);
        let dec = (0..STAGES)
            .map(|i| {
                let cin = w[STAGES - 1 - i];
                let cout = if i + 1 == STAGES { 3 } else { w[STAGES - 2 - i] };
                Conv::new(ps, &format!("dec{i}"), cin, cout, 3, Init::Scaled(1.0), rng)
            })
            .collect();
        Self { enc, to_z, from_z, dec }
    }
}

/// `[C][N][H][W]` to `(C*H*W) x N` columns.
fn flatten<S: Scalar>(x: &Fm<S>) -> Vec<S> {
    let hw = x.h * x.w;
    let mut out = vec![S::zero(); x.data.len()];
    for c in 0..x.c {
        for n in 0..x.n {
            for p in 0..hw {
                out[(c * hw + p) * x.n + n] = x.data[(c * x.n + n) * hw + p];
            }
        }
    }
    out
}

fn unflatten<S: Scalar>(v: &[S], c: usize, n: usize, h: usize, w: usize) -> Fm<S> {
    let hw = h * w;
    let mut x = Fm::zeros(c, n, h, w);
    for ci in 0..c {
        for ni in 0..n {
            for p in 0..hw {
                x.data[(ci * n + ni) * hw + p] = v[(ci * hw + p) * n + ni];
            }
        }
    }
    x
}

struct Cache<S> {
    enc: Vec<(ConvCache<S>, Fm<S>)>,
    flat: Vec<S>,
    z: Vec<S>,
    dec_pre: Vec<S>,
    dec: Vec<(ConvCache<S>, Option<Fm<S>>)>,
}

#[derive(Clone, Debug)]
pub struct Embedder<S> {
    spec: EmbedderSpec,
    params: ParamSet<S>,
    arch: Arch,
    /// Mean bottleneck over the training set, removed before normalizing.
    center: Vec<f64>,
}

impl<S: Scalar> Embedder<S> {
    pub fn new(spec: EmbedderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let arch = Arch::build(&spec, &mut params, &mut rng);
        let center = vec![0.0; spec.dim];
        Ok(Self { spec, params, arch, center })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn digest(&self) -> String {
        let mut ps = self.params.clone();
        ps.add("center", &[self.spec.dim], self.center.iter().map(|&v| S::lit(v)).collect());
        ps.digest()
    }

    fn encode(&self, x: &Fm<S>) -> (Vec<S>, Cache<S>) {
        let n = x.n;
        let mut h = x.clone();
        let mut enc = Vec::with_capacity(STAGES);
        for conv in &self.arch.enc {
            let (pre, cc) = conv.forward(self.params.get(conv.w), self.params.get(conv.b), &h);
            h = avg_pool2(&silu(&pre));
            enc.push((cc, pre));
        }
        let flat = flatten(&h);
        let z = self.arch.to_z.forward(&self.params, &flat, n);
        (z, Cache { enc, flat, z: Vec::new(), dec_pre: Vec::new(), dec: Vec::new() })
    }

    fn reconstruct(&self, x: &Fm<S>) -> (Fm<S>, Cache<S>) {
        let n = x.n;
        let (z, mut cache) = self.encode(x);
        let pre = self.arch.from_z.forward(&self.params, &z, n);
        let side = self.spec.bottleneck_side();
        let mut h = unflatten(&pre.iter().map(|&v| v * crate::nn::fm::sigmoid(v)).collect::<Vec<_>>(), self.spec.widths()[STAGES - 1], n, side, side);
        let mut dec = Vec::with_capacity(STAGES);
        for (i, conv) in self.arch.dec.iter().enumerate() {
            let up = upsample2(&h);
            let (y, cc) = conv.forward(self.params.get(conv.w), self.params.get(conv.b), &up);
            if i + 1 < STAGES {
                h = silu(&y);
                dec.push((cc, Some(y)));
            } else {
                h = y;
                dec.push((cc, None));
            }
        }
        cache.z = z;
        cache.dec_pre = pre;
        cache.dec = dec;
        (h, cache)
    }

    fn backward(&self, cache: &Cache<S>, dout: &Fm<S>, grads: &mut Grads<S>) {
        let n = dout.n;
        let mut d = dout.clone();
        for (i, conv) in self.arch.dec.iter().enumerate().rev() {
            let (cc, pre) = &cache.dec[i];
            if let Some(pre) = pre {
                d = silu_backward(pre, &d);
            }
            let dup = conv.backward_into(self.params.get(conv.w), cc, &d, grads);
            d = upsample2_backward(&dup);
        }
        let dflat_act = flatten(&d);
        let dpre: Vec<S> = cache
            .dec_pre
            .iter()
            .zip(&dflat_act)
            .map(|(&x, &g)| {
                let s = crate::nn::fm::sigmoid(x);
                g * s * (S::one() + x * (S::one() - s))
            })
            .collect();
        let dz = self.arch.from_z.backward(&self.params, &cache.z, &dpre, n, grads);
        let dflat = self.arch.to_z.backward(&self.params, &cache.flat, &dz, n, grads);
        let r = self.spec.resolution;
        let side = self.spec.bottleneck_side();
        let mut d = unflatten(&dflat, self.spec.widths()[STAGES - 1], n, side, side);
        for (i, conv) in self.arch.enc.iter().enumerate().rev() {
            let (cc, pre) = &cache.enc[i];
            let hw = r >> i;
            let dact = avg_pool2_backward(&d, hw, hw);
            let dpre = silu_backward(pre, &dact);
            d = conv.backward_into(self.params.get(conv.w), cc, &dpre, grads);
        }
    }

    fn check(&self, img: &Image<S>) -> Result<()> {
        if img.dims() != (self.spec.resolution, self.spec.resolution) {
            return Err(Error::dims(format!(
                "embedder expects {r}x{r}, got {}x{}",
                img.height(),
                img.width(),
                r = self.spec.resolution
            )));
        }
        Ok(())
    }

    /// Raw bottleneck activations, one row per image.
    pub fn bottleneck(&self, images: &[&Image<S>]) -> Result<Vec<Vec<f64>>> {
        for im in images {
            self.check(im)?;
        }
        let n = images.len();
        let (z, _) = self.encode(&to_model_space(images)?);
        Ok((0..n).map(|s| (0..self.spec.dim).map(|j| z[j * n + s].as_f64()).collect()).collect())
    }

    /// Centered, L2-normalized embeddings.
    pub fn embed_batch(&self, images: &[&Image<S>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.bottleneck(images)?.into_iter().map(|z| self.normalize(z)).collect())
    }

    fn normalize(&self, mut z: Vec<f64>) -> Vec<f64> {
        z.iter_mut().zip(&self.center).for_each(|(v, c)| *v -= c);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            z.iter_mut().for_each(|v| *v /= norm);
        } else {
            z[0] = 1.0;
        }
        z
    }

    /// Mean squared reconstruction error in `[0, 1]` pixel units.
    pub fn reconstruction_mse(&self, images: &[&Image<S>]) -> Result<f64> {
        let x = to_model_space(images)?;
        let (y, _) = self.reconstruct(&x);
        // model space spans twice the pixel range
        Ok(x.data.iter().zip(&y.data).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>() / x.data.len() as f64 / 4.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "spec": self.spec, "center": self.center });
        save_checkpoint(path, "embedder", meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint::<S>(path)?;
        if header.kind != "embedder" {
            return Err(Error::Checkpoint(format!("{} holds a {} checkpoint, not an embedder", path.display(), header.kind)));
        }
        let spec: EmbedderSpec = serde_json::from_value(header.meta["spec"].clone())?;
        let center: Vec<f64> = serde_json::from_value(header.meta["center"].clone())?;
        let mut e = Self::new(spec, 0)?;
        e.params.load_from(&params)?;
        if center.len() != e.spec.dim {
            return Err(Error::Checkpoint("embedder center has the wrong length".into()));
        }
        e.center = center;
        Ok(e)
    }
}

impl<S: Scalar> Embed<S> for Embedder<S> {
    fn embed(&self, image: &Image<S>) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[image])?.remove(0))
    }
}

/// Cosine similarity of two embeddings, in `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn similarity<S: Scalar>(e: &Embedder<S>, x: &Image<S>, y: &Image<S>) -> Result<f64> {
    let v = e.embed_batch(&[x, y])?;
    Ok(cosine(&v[0], &v[1]))
}

/// Trains the autoencoder on `images` and fixes the embedding center.
pub fn train_embedder<S: Scalar>(
    images: &[Image<S>],
    spec: EmbedderSpec,
    cfg: &OptimConfig,
    mut on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<(Embedder<S>, Vec<f64>)> {
    cfg.validate()?;
    if images.len() < MIN_TRAIN_IMAGES {
        return Err(Error::invalid(format!("embedder needs at least {MIN_TRAIN_IMAGES} images, got {}", images.len())));
    }
    let mut e = Embedder::new(spec, cfg.seed ^ 0xe3bd)?;
    for im in images {
        e.check(im)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&e.params, cfg.learning_rate);
    let start = std::time::Instant::now();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch: Vec<&Image<S>> = (0..cfg.batch_size).map(|_| &images[rng.gen_range(0..images.len())]).collect();
        let x = to_model_space(&batch)?;
        let (y, cache) = e.reconstruct(&x);
        let count = S::from_usize(x.data.len()).unwrap();
        let loss = x.data.iter().zip(&y.data).map(|(&a, &b)| (b - a) * (b - a)).sum::<S>() / count;
        let l = loss.as_f64();
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, loss: l });
        }
        let two = S::lit(2.0) / count;
        let dout = Fm { data: x.data.iter().zip(&y.data).map(|(&a, &b)| two * (b - a)).collect(), ..y };
        let mut g = e.params.zero_grads();
        e.backward(&cache, &dout, &mut g);
        let norm = g.norm().as_f64();
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            g.scale(S::lit(cfg.grad_clip / norm));
        }
        opt.step_with_lr(&mut e.params, &g, cfg.lr_at(it));
        losses.push(l);
        on_log(&LogRecord { iteration: it, loss: l, wall_clock_s: start.elapsed().as_secs_f64() })?;
    }
    let mut center = vec![0.0; e.spec.dim];
    for chunk in images.chunks(64) {
        for z in e.bottleneck(&chunk.iter().collect::<Vec<_>>())? {
            center.iter_mut().zip(&z).for_each(|(c, v)| *c += v);
        }
    }
    center.iter_mut().for_each(|c| *c /= images.len() as f64);
    e.center = center;
    Ok((e, losses))
}

/// `n` training images drawn from a corpus: alternately bare scenes and
/// scenes with a random background light added.
pub fn corpus_images<S: Scalar>(corpus: &Corpus<S>, n: usize, seed: u64) -> Result<Vec<Image<S>>> {
    if corpus.scenes.is_empty() || corpus.lights.is_empty() {
        return Err(Error::invalid("corpus has no scenes or no lights"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s = rng.gen_range(0..corpus.scenes.len());
            let l = rng.gen_range(0..corpus.lights.len());
            if i % 2 == 0 {
                Ok(corpus.scenes[s].clone())
            } else {
                let lb = mask_background_light(&corpus.lights[l], &corpus.masks[s])?;
                composite(&corpus.scenes[s], &lb, SynthesisParams::UNIT)
            }
        })
        .collect()
}
