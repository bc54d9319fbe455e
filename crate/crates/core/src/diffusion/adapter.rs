//! Low-rank weight deltas over a frozen denoiser.
//!
//! Each targeted convolution `W` (viewed as `out x fan_in`) gains
//! `scale * up * down`, with `up: out x rank` random and `down: rank x fan_in`
//! zero, so a fresh adapter leaves the base function unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::unet::Denoiser;
use crate::error::{Error, Result};
use crate::nn::layers::normal_vec;
use crate::nn::{Grads, LowRank, ParamId, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AdapterTarget {
    /// Weight tensor in the base parameter set.
    pub weight: ParamId,
    pub weight_name: String,
    pub rows: usize,
    pub cols: usize,
    pub up: ParamId,
    pub down: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankAdapter<S> {
    rank: usize,
    scale: f64,
    params: ParamSet<S>,
    targets: Vec<AdapterTarget>,
}

impl<S: Scalar> LowRankAdapter<S> {
    pub fn new(base: &Denoiser<S>, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::invalid("adapter rank must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut targets = Vec::new();
        for conv in base.adapter_targets() {
            let entry = &base.params().entries()[conv.w.0];
            let (rows, cols) = (conv.cout, conv.fan_in());
            let up = params.add(format!("{}.up", entry.name), &[rows, rank], normal_vec(&mut rng, rows * rank, 1.0 / (rank as f64).sqrt()));
            let down = params.add(format!("{}.down", entry.name), &[rank, cols], vec![S::zero(); rank * cols]);
            targets.push(AdapterTarget { weight: conv.w, weight_name: entry.name.clone(), rows, cols, up, down });
        }
        Ok(Self { rank, scale, params, targets })
    }

    /// Rebuilds the target layout for `base` and loads stored factors.
    pub fn from_params(base: &Denoiser<S>, rank: usize, scale: f64, params: ParamSet<S>) -> Result<Self> {
        let mut a = Self::new(base, rank, scale, 0)?;
        a.params.load_from(&params)?;
        Ok(a)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub(crate) fn lowrank_for(&self, weight: ParamId) -> Option<LowRank<'_, S>> {
        self.targets.iter().find(|t| t.weight == weight).map(|t| LowRank {
            up: self.params.get(t.up),
            down: self.params.get(t.down),
            rank: self.rank,
            scale: S::lit(self.scale),
        })
    }

    /// Maps gradients w.r.t. merged weights onto the factors.
    pub fn grads_from_merged(&self, merged: &Grads<S>) -> Grads<S> {
        let mut g = self.params.zero_grads();
        let s = S::lit(self.scale);
        for t in &self.targets {
            let dw = merged.get(t.weight);
            // d up = s * dW * down^T ; d down = s * up^T * dW
            S::gemm(t.rows, t.cols, self.rank, s, dw, false, self.params.get(t.down), true, S::zero(), g.get_mut(t.up));
            S::gemm(self.rank, t.rows, t.cols, s, self.params.get(t.up), true, dw, false, S::zero(), g.get_mut(t.down));
        }
        g
    }
}

/// Effective weights `W + scale * up * down` for every targeted layer.
pub fn apply_adapter<S: Scalar>(base: &ParamSet<S>, adapter: &LowRankAdapter<S>) -> Result<ParamSet<S>> {
    let mut merged = base.clone();
    for t in &adapter.targets {
        let entry = base
            .entries()
            .get(t.weight.0)
            .ok_or_else(|| Error::dims(format!("base has no tensor for {}", t.weight_name)))?;
        if entry.name != t.weight_name || entry.value.len() != t.rows * t.cols {
            return Err(Error::dims(format!(
                "adapter target {} ({}x{}) does not match base tensor {} {:?}",
                t.weight_name, t.rows, t.cols, entry.name, entry.shape
            )));
        }
        S::gemm(
            t.rows,
            adapter.rank,
            t.cols,
            S::lit(adapter.scale),
            adapter.params.get(t.up),
            false,
            adapter.params.get(t.down),
            false,
            S::one(),
            merged.get_mut(t.weight),
        );
    }
    Ok(merged)
}
