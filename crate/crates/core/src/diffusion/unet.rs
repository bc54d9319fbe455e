//! Small conditional U-Net predicting the noise added to an RGB raster.
//!
//! The network input is the noisy raster concatenated channel-wise with the
//! condition. Every block is `silu(conv_a(x) + time) -> +silu(conv_b(.))`;
//! the encoder halves resolution between stages, the decoder upsamples and
//! concatenates the matching encoder output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::LowRankAdapter;
use crate::error::{Error, Result};
use crate::nn::fm::{
    add_sample_bias, avg_pool2, avg_pool2_backward, concat_channels, silu, silu_backward, sum_planes, upsample2,
    upsample2_backward,
};
use crate::nn::layers::normal_vec;
use crate::nn::{Conv, ConvCache, Fm, Grads, Init, Linear, ParamId, ParamSet};
use crate::scalar::Scalar;

/// Channels of the noisy raster and of the predicted noise.
pub const NOISE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSpec {
    /// Noisy channels plus condition channels.
    pub input_channels: usize,
    pub base_width: usize,
    /// Encoder/decoder stages; resolution halves between stages.
    pub depth: usize,
    /// Number of class labels; 0 disables class conditioning.
    pub class_vocab: usize,
    #[serde(default = "default_time_dim")]
    pub time_dim: usize,
}

fn default_time_dim() -> usize {
    32
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self { input_channels: 6, base_width: 16, depth: 2, class_vocab: 0, time_dim: 32 }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels < NOISE_CHANNELS {
            return Err(Error::invalid(format!("input_channels {} < {NOISE_CHANNELS}", self.input_channels)));
        }
        if self.depth < 1 || self.depth > 5 {
            return Err(Error::invalid(format!("depth {} outside 1..=5", self.depth)));
        }
        if self.base_width < 1 || self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::invalid("base_width must be >= 1 and time_dim even"));
        }
        Ok(())
    }

    pub fn cond_channels(&self) -> usize {
        self.input_channels - NOISE_CHANNELS
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Spatial sides must be divisible by this.
    pub fn side_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }
}

/// Sinusoidal timestep features plus an optional learned class vector.
#[derive(Clone, Debug)]
pub(crate) struct TimeEmbed {
    class_table: Option<ParamId>,
    lin: Linear,
    dim: usize,
    vocab: usize,
}

pub(crate) struct TimeCache<S> {
    emb: Vec<S>,
    pre: Vec<S>,
    class: Option<Vec<usize>>,
    n: usize,
}

impl TimeEmbed {
    fn new<S: Scalar>(ps: &mut ParamSet<S>, dim: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Self {
        let class_table = (vocab > 0).then(|| ps.add("time.class", &[vocab, dim], normal_vec(rng, vocab * dim, 1.0)));
        let lin = Linear::new(ps, "time.lin", dim, dim, Init::Scaled(1.0), rng);
        Self { class_table, lin, dim, vocab }
    }

    fn forward<S: Scalar>(
        &self,
        ps: &ParamSet<S>,
        t: &[usize],
        class: Option<&[usize]>,
    ) -> Result<(Vec<S>, TimeCache<S>)> {
        let n = t.len();
        let half = self.dim / 2;
        let mut emb = vec![S::zero(); self.dim * n];
        for (s, &ts) in t.iter().enumerate() {
            for j in 0..half {
                let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
                let arg = ts as f64 * freq;
                emb[j * n + s] = S::lit(arg.sin());
                emb[(half + j) * n + s] = S::lit(arg.cos());
            }
        }
        if let Some(ids) = class {
            let table = self.class_table.ok_or_else(|| Error::invalid("class id given to a model without class vocabulary"))?;
            if ids.len() != n {
                return Err(Error::dims(format!("{} class ids for batch of {n}", ids.len())));
            }
            let tv = ps.get(table);
            for (s, &c) in ids.iter().enumerate() {
                if c >= self.vocab {
                    return Err(Error::invalid(format!("class id {c} >= vocabulary {}", self.vocab)));
                }
                for j in 0..self.dim {
                    emb[j * n + s] += tv[c * self.dim + j];
                }
            }
        }
        let pre = self.lin.forward(ps, &emb, n);
        let out = pre.iter().map(|&v| v * crate::nn::fm::sigmoid(v)).collect();
        Ok((out, TimeCache { emb, pre, class: class.map(|c| c.to_vec()), n }))
    }

    fn backward<S: Scalar>(&self, ps: &ParamSet<S>, cache: &TimeCache<S>, dtemb: &[S], grads: &mut Grads<S>) {
        let n = cache.n;
        let dpre: Vec<S> = cache
            .pre
            .iter()
            .zip(dtemb)
            .map(|(&x, &g)| {
                let s = crate::nn::fm::sigmoid(x);
                g * s * (S::one() + x * (S::one() - s))
            })
            .collect();
        let demb = self.lin.backward(ps, &cache.emb, &dpre, n, grads);
        if let (Some(table), Some(ids)) = (self.class_table, &cache.class) {
            let g = grads.get_mut(table);
            for (s, &c) in ids.iter().enumerate() {
                for j in 0..self.dim {
                    g[c * self.dim + j] += demb[j * n + s];
                }
            }
        }
    }
}

/// `e = a + silu(conv_b(a))`, `a = silu(conv_a(x) + proj(temb))`.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub conv_a: Conv,
    pub tproj: Linear,
    pub conv_b: Conv,
}

pub(crate) struct BlockCache<S> {
    ca: ConvCache<S>,
    pa: Fm<S>,
    cb: ConvCache<S>,
    pb: Fm<S>,
}

/// Which weights a forward pass reads.
#[derive(Clone, Copy)]
pub struct Weights<'a, S> {
    pub params: &'a ParamSet<S>,
    /// Unmerged low-rank path; forward only.
    pub lora: Option<&'a LowRankAdapter<S>>,
}

impl<'a, S: Scalar> Weights<'a, S> {
    pub fn plain(params: &'a ParamSet<S>) -> Self {
        Self { params, lora: None }
    }

    fn conv(&self, conv: &Conv, x: &Fm<S>) -> (Fm<S>, ConvCache<S>) {
        let lr = self.lora.and_then(|a| a.lowrank_for(conv.w));
        conv.forward_lowrank(self.params.get(conv.w), self.params.get(conv.b), lr, x)
    }
}

impl Block {
    pub(crate) fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        cin: usize,
        cout: usize,
        time_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv_a: Conv::new(ps, &format!("{name}.conv_a"), cin, cout, 3, Init::Scaled(1.4), rng),
            tproj: Linear::new(ps, &format!("{name}.time"), time_dim, cout, Init::Scaled(1.0), rng),
            conv_b: Conv::new(ps, &format!("{name}.conv_b"), cout, cout, 3, Init::Scaled(1.0), rng),
        }
    }

    pub(crate) fn forward<S: Scalar>(&self, w: &Weights<'_, S>, x: &Fm<S>, temb: &[S]) -> (Fm<S>, BlockCache<S>) {
        let (mut pa, ca) = w.conv(&self.conv_a, x);
        let tb = self.tproj.forward(w.params, temb, x.n);
        add_sample_bias(&mut pa, &tb);
        let a = silu(&pa);
        let (pb, cb) = w.conv(&self.conv_b, &a);
        let mut e = silu(&pb);
        e.add_assign(&a);
        (e, BlockCache { ca, pa, cb, pb })
    }

    /// Returns `(dx, dtemb)` and accumulates parameter gradients.
    pub(crate) fn backward<S: Scalar>(
        &self,
        ps: &ParamSet<S>,
        cache: &BlockCache<S>,
        de: &Fm<S>,
        temb: &[S],
        grads: &mut Grads<S>,
    ) -> (Fm<S>, Vec<S>) {
        let dpb = silu_backward(&cache.pb, de);
        let mut da = self.conv_b.backward_into(ps.get(self.conv_b.w), &cache.cb, &dpb, grads);
        da.add_assign(de);
        let dpa = silu_backward(&cache.pa, &da);
        let dbias = sum_planes(&dpa);
        let dtemb = self.tproj.backward(ps, temb, &dbias, de.n, grads);
        let dx = self.conv_a.backward_into(ps.get(self.conv_a.w), &cache.ca, &dpa, grads);
        (dx, dtemb)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Arch {
    pub time: TimeEmbed,
    pub enc: Vec<Block>,
    pub dec: Vec<Block>,
    pub out: Conv,
}

impl Arch {
    fn build<S: Scalar>(spec: &DenoiserSpec, ps: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Self {
        let time = TimeEmbed::new(ps, spec.time_dim, spec.class_vocab, rng);
        let enc = (0..spec.depth)
            .map(|i| {
                let cin = if i == 0 { spec.input_channels } else { spec.width(i - 1) };
                Block::new(ps, &format!("enc{i}"), cin, spec.width(i), spec.time_dim, rng)
            })
            .collect();
        let dec = (0..spec.depth.saturating_sub(1))
            .map(|i| Block::new(ps, &format!("dec{i}"), spec.width(i + 1) + spec.width(i), spec.width(i), spec.time_dim, rng))
            .collect();
        let out = Conv::new(ps, "out", spec.width(0), NOISE_CHANNELS, 3, Init::Zero, rng);
        Self { time, enc, dec, out }
    }
}

pub struct DenoiserCache<S> {
    time: TimeCache<S>,
    temb: Vec<S>,
    enc: Vec<BlockCache<S>>,
    enc_dims: Vec<(usize, usize)>,
    dec: Vec<Option<BlockCache<S>>>,
    out: ConvCache<S>,
}

impl<S> DenoiserCache<S> {
    pub fn temb(&self) -> &[S] {
        &self.temb
    }
}

/// Per-stage gradients leaving the main network during backward.
pub struct DenoiserBackward<S> {
    /// Gradient w.r.t. the residual added to each encoder output.
    pub d_residuals: Vec<Fm<S>>,
    /// Time-embedding gradient not yet propagated through the time MLP.
    pub dtemb: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct Denoiser<S> {
    spec: DenoiserSpec,
    params: ParamSet<S>,
    arch: Arch,
}

impl<S: Scalar> Denoiser<S> {
    pub fn new(spec: DenoiserSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let arch = Arch::build(&spec, &mut params, &mut rng);
        Ok(Self { spec, params, arch })
    }

    /// Rebuilds the architecture for `spec` and loads `params` into it.
    pub fn from_params(spec: DenoiserSpec, params: ParamSet<S>) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        model.params.load_from(&params)?;
        Ok(model)
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub(crate) fn arch(&self) -> &Arch {
        &self.arch
    }

    /// The 3x3 convolutions that low-rank adapters attach to.
    pub(crate) fn adapter_targets(&self) -> Vec<Conv> {
        let a = &self.arch;
        a.enc
            .iter()
            .chain(&a.dec)
            .flat_map(|b| [b.conv_a, b.conv_b])
            .chain(std::iter::once(a.out))
            .collect()
    }

    fn check_inputs(&self, x_t: &Fm<S>, cond: &Fm<S>, t: &[usize]) -> Result<()> {
        if x_t.c != NOISE_CHANNELS || cond.c != self.spec.cond_channels() {
            return Err(Error::dims(format!(
                "expected {NOISE_CHANNELS}+{} channels, got {}+{}",
                self.spec.cond_channels(),
                x_t.c,
                cond.c
            )));
        }
        if (x_t.n, x_t.h, x_t.w) != (cond.n, cond.h, cond.w) || t.len() != x_t.n {
            return Err(Error::dims("noisy input, condition and timesteps disagree on shape"));
        }
        let m = self.spec.side_multiple();
        if x_t.h % m != 0 || x_t.w % m != 0 {
            return Err(Error::dims(format!("spatial size {}x{} not divisible by {m}", x_t.h, x_t.w)));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        weights: &Weights<'_, S>,
        x_t: &Fm<S>,
        cond: &Fm<S>,
        t: &[usize],
        class: Option<&[usize]>,
        residuals: Option<&[Fm<S>]>,
    ) -> Result<(Fm<S>, DenoiserCache<S>)> {
        self.check_inputs(x_t, cond, t)?;
        let (temb, time) = self.arch.time.forward(weights.params, t, class)?;
        self.forward_with_temb(weights, x_t, cond, temb, time, residuals)
    }

    /// Time embedding alone, shared with a control branch.
    pub(crate) fn time_embedding(
        &self,
        params: &ParamSet<S>,
        t: &[usize],
        class: Option<&[usize]>,
    ) -> Result<(Vec<S>, TimeCache<S>)> {
        self.arch.time.forward(params, t, class)
    }

    pub(crate) fn check(&self, x_t: &Fm<S>, cond: &Fm<S>, t: &[usize]) -> Result<()> {
        self.check_inputs(x_t, cond, t)
    }

    pub(crate) fn forward_with_temb(
        &self,
        weights: &Weights<'_, S>,
        x_t: &Fm<S>,
        cond: &Fm<S>,
        temb: Vec<S>,
        time: TimeCache<S>,
        residuals: Option<&[Fm<S>]>,
    ) -> Result<(Fm<S>, DenoiserCache<S>)> {
        let depth = self.spec.depth;
        if let Some(r) = residuals {
            if r.len() != depth {
                return Err(Error::dims(format!("{} residuals for {depth} stages", r.len())));
            }
        }
        let mut x = concat_channels(&[x_t, cond]);
        let mut enc_caches = Vec::with_capacity(depth);
        let mut enc_dims = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        for (i, block) in self.arch.enc.iter().enumerate() {
            enc_dims.push((x.h, x.w));
            let (mut e, c) = block.forward(weights, &x, &temb);
            enc_caches.push(c);
            if i + 1 < depth {
                x = avg_pool2(&e);
            }
            if let Some(r) = residuals {
                if !r[i].same_shape(&e) {
                    return Err(Error::dims(format!("residual {i} shape mismatch")));
                }
                e.add_assign(&r[i]);
            }
            skips.push(e);
        }
        let mut x = skips.pop().expect("depth >= 1");
        let mut dec_caches: Vec<Option<BlockCache<S>>> = (0..depth.saturating_sub(1)).map(|_| None).collect();
        for i in (0..depth.saturating_sub(1)).rev() {
            let up = upsample2(&x);
            let cat = concat_channels(&[&up, &skips[i]]);
            let (y, c) = self.arch.dec[i].forward(weights, &cat, &temb);
            dec_caches[i] = Some(c);
            x = y;
        }
        let (out, out_cache) = weights.conv(&self.arch.out, &x);
        Ok((out, DenoiserCache { time, temb, enc: enc_caches, enc_dims, dec: dec_caches, out: out_cache }))
    }

    /// Backward through everything except the time MLP.
    ///
    /// `params` must be the (merged) weights used in forward.
    pub fn backward(
        &self,
        params: &ParamSet<S>,
        cache: &DenoiserCache<S>,
        dout: &Fm<S>,
        grads: &mut Grads<S>,
    ) -> DenoiserBackward<S> {
        let depth = self.spec.depth;
        let temb = &cache.temb;
        let mut dtemb = vec![S::zero(); temb.len()];
        let add = |acc: &mut Vec<S>, d: &[S]| acc.iter_mut().zip(d).for_each(|(a, b)| *a += *b);

        let mut dx = self.arch.out.backward_into(params.get(self.arch.out.w), &cache.out, dout, grads);
        let mut d_skips: Vec<Option<Fm<S>>> = (0..depth).map(|_| None).collect();
        for i in 0..depth.saturating_sub(1) {
            let c = cache.dec[i].as_ref().expect("decoder cache");
            let (dcat, dt) = self.arch.dec[i].backward(params, c, &dx, temb, grads);
            add(&mut dtemb, &dt);
            let up_c = self.spec.width(i + 1);
            let dup = dcat.channels(0, up_c);
            d_skips[i] = Some(dcat.channels(up_c, self.spec.width(i)));
            dx = upsample2_backward(&dup);
        }
        d_skips[depth - 1] = Some(dx);
        let d_residuals: Vec<Fm<S>> = d_skips.into_iter().map(|d| d.expect("all stages visited")).collect();

        let mut carry: Option<Fm<S>> = None;
        for i in (0..depth).rev() {
            let mut de = d_residuals[i].clone();
            if let Some(c) = carry.take() {
                de.add_assign(&c);
            }
            let (dxin, dt) = self.arch.enc[i].backward(params, &cache.enc[i], &de, temb, grads);
            add(&mut dtemb, &dt);
            if i > 0 {
                let (h, w) = cache.enc_dims[i - 1];
                carry = Some(avg_pool2_backward(&dxin, h, w));
            }
        }
        DenoiserBackward { d_residuals, dtemb }
    }

    /// Finishes backward through the time MLP and class table.
    pub fn time_backward(&self, params: &ParamSet<S>, cache: &DenoiserCache<S>, dtemb: &[S], grads: &mut Grads<S>) {
        self.arch.time.backward(params, &cache.time, dtemb, grads);
    }
}

