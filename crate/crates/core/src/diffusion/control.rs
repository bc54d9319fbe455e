//! Trainable copy of the denoiser encoder that injects a spatial control
//! signal through zero-initialized 1x1 projections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::unet::{Block, BlockCache, Denoiser, DenoiserSpec, Weights};
use crate::error::{Error, Result};
use crate::nn::fm::{avg_pool2, avg_pool2_backward, concat_channels};
use crate::nn::layers::normal_vec;
use crate::nn::{Conv, ConvCache, Fm, Grads, Init, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct ControlBranch<S> {
    spec: DenoiserSpec,
    control_channels: usize,
    params: ParamSet<S>,
    blocks: Vec<Block>,
    proj: Vec<Conv>,
}

pub struct ControlCache<S> {
    blocks: Vec<BlockCache<S>>,
    dims: Vec<(usize, usize)>,
    proj: Vec<ConvCache<S>>,
}

impl<S: Scalar> ControlBranch<S> {
    fn build(spec: &DenoiserSpec, control_channels: usize, seed: u64) -> (ParamSet<S>, Vec<Block>, Vec<Conv>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut blocks = Vec::with_capacity(spec.depth);
        let mut proj = Vec::with_capacity(spec.depth);
        for i in 0..spec.depth {
            let cin = if i == 0 { spec.input_channels + control_channels } else { spec.width(i - 1) };
            blocks.push(Block::new(&mut ps, &format!("ctrl{i}"), cin, spec.width(i), spec.time_dim, &mut rng));
            proj.push(Conv::new(&mut ps, &format!("ctrl{i}.zero"), spec.width(i), spec.width(i), 1, Init::Zero, &mut rng));
        }
        (ps, blocks, proj)
    }

    /// Copies the encoder of `base`; the extra control input channels get a
    /// fresh random init and every output projection starts at zero.
    pub fn from_denoiser(base: &Denoiser<S>, control_channels: usize, seed: u64) -> Result<Self> {
        if control_channels == 0 {
            return Err(Error::invalid("control branch needs at least one control channel"));
        }
        let spec = base.spec().clone();
        let (mut ps, blocks, proj) = Self::build(&spec, control_channels, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let bp = base.params();
        for (i, (mine, theirs)) in blocks.iter().zip(&base.arch().enc).enumerate() {
            let pairs = [
                (mine.conv_a.b, theirs.conv_a.b),
                (mine.conv_b.w, theirs.conv_b.w),
                (mine.conv_b.b, theirs.conv_b.b),
                (mine.tproj.w, theirs.tproj.w),
                (mine.tproj.b, theirs.tproj.b),
            ];
            for (dst, src) in pairs {
                ps.get_mut(dst).copy_from_slice(bp.get(src));
            }
            if i == 0 {
                let src = bp.get(theirs.conv_a.w);
                let (base_row, row) = (theirs.conv_a.fan_in(), mine.conv_a.fan_in());
                let extra = row - base_row;
                let std = 1.0 / (row as f64).sqrt();
                let dst = ps.get_mut(mine.conv_a.w);
                for o in 0..mine.conv_a.cout {
                    dst[o * row..o * row + base_row].copy_from_slice(&src[o * base_row..(o + 1) * base_row]);
                    let fresh: Vec<S> = normal_vec(&mut rng, extra, std);
                    dst[o * row + base_row..(o + 1) * row].copy_from_slice(&fresh);
                }
            } else {
                ps.get_mut(mine.conv_a.w).copy_from_slice(bp.get(theirs.conv_a.w));
            }
        }
        Ok(Self { spec, control_channels, params: ps, blocks, proj })
    }

    pub fn from_params(spec: DenoiserSpec, control_channels: usize, params: ParamSet<S>) -> Result<Self> {
        spec.validate()?;
        let (mut ps, blocks, proj) = Self::build(&spec, control_channels, 0);
        ps.load_from(&params)?;
        Ok(Self { spec, control_channels, params: ps, blocks, proj })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn control_channels(&self) -> usize {
        self.control_channels
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    /// Per-stage residuals to add to the denoiser's encoder outputs.
    pub fn forward(
        &self,
        x_t: &Fm<S>,
        cond: &Fm<S>,
        control: &Fm<S>,
        temb: &[S],
    ) -> Result<(Vec<Fm<S>>, ControlCache<S>)> {
        if control.c != self.control_channels || (control.n, control.h, control.w) != (x_t.n, x_t.h, x_t.w) {
            return Err(Error::dims(format!(
                "control signal {}x{}x{}x{} does not match noisy input {}x{}x{}",
                control.c, control.n, control.h, control.w, x_t.n, x_t.h, x_t.w
            )));
        }
        let w = Weights::plain(&self.params);
        let mut x = concat_channels(&[x_t, cond, control]);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut dims = Vec::with_capacity(self.blocks.len());
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut pcaches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            dims.push((x.h, x.w));
            let (e, c) = block.forward(&w, &x, temb);
            caches.push(c);
            let p = &self.proj[i];
            let (r, pc) = p.forward(self.params.get(p.w), self.params.get(p.b), &e);
            out.push(r);
            pcaches.push(pc);
            if i + 1 < self.blocks.len() {
                x = avg_pool2(&e);
            }
        }
        Ok((out, ControlCache { blocks: caches, dims, proj: pcaches }))
    }

    /// Accumulates branch gradients and returns the time-embedding gradient.
    pub fn backward(&self, cache: &ControlCache<S>, d_residuals: &[Fm<S>], temb: &[S], grads: &mut Grads<S>) -> Vec<S> {
        let mut dtemb = vec![S::zero(); temb.len()];
        let mut carry: Option<Fm<S>> = None;
        for i in (0..self.blocks.len()).rev() {
            let p = &self.proj[i];
            let mut de = p.backward_into(self.params.get(p.w), &cache.proj[i], &d_residuals[i], grads);
            if let Some(c) = carry.take() {
                de.add_assign(&c);
            }
            let (dx, dt) = self.blocks[i].backward(&self.params, &cache.blocks[i], &de, temb, grads);
            dtemb.iter_mut().zip(&dt).for_each(|(a, b)| *a += *b);
            if i > 0 {
                let (h, w) = cache.dims[i - 1];
                carry = Some(avg_pool2_backward(&dx, h, w));
            }
        }
        dtemb
    }
}
