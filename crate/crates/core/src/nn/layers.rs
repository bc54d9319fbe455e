use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fm::{col2im3, im2col3, Fm};
use super::params::{Grads, ParamId, ParamSet};
use crate::scalar::Scalar;

/// How a layer's weights are initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `gain / sqrt(fan_in)`.
    Scaled(f64),
    Zero,
}

pub(crate) fn normal_vec<S: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<S> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::lit(z * std)
        })
        .collect()
}

/// Square-kernel convolution with "same" zero padding; `k` is 1 or 3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

/// Input patches kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<S> {
    cols: Vec<S>,
    n: usize,
    h: usize,
    w: usize,
}

/// Low-rank weight path `scale * up * down` evaluated without merging.
#[derive(Clone, Copy, Debug)]
pub struct LowRank<'a, S> {
    pub up: &'a [S],
    pub down: &'a [S],
    pub rank: usize,
    pub scale: S,
}

impl Conv {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(k == 1 || k == 3, "kernel size must be 1 or 3");
        let fan_in = cin * k * k;
        let wv = match init {
            Init::Scaled(gain) => normal_vec(rng, cout * fan_in, gain / (fan_in as f64).sqrt()),
            Init::Zero => vec![S::zero(); cout * fan_in],
        };
        let w = ps.add(format!("{name}.weight"), &[cout, cin, k, k], wv);
        let b = ps.add(format!("{name}.bias"), &[cout], vec![S::zero(); cout]);
        Self { w, b, cin, cout, k }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn patches<S: Scalar>(&self, x: &Fm<S>) -> Vec<S> {
        if self.k == 3 {
            im2col3(x)
        } else {
            x.data.clone()
        }
    }

    /// Forward with an explicit weight buffer (base or merged).
    pub fn forward<S: Scalar>(&self, weight: &[S], bias: &[S], x: &Fm<S>) -> (Fm<S>, ConvCache<S>) {
        self.forward_lowrank(weight, bias, None, x)
    }

    pub fn forward_lowrank<S: Scalar>(
        &self,
        weight: &[S],
        bias: &[S],
        lowrank: Option<LowRank<'_, S>>,
        x: &Fm<S>,
    ) -> (Fm<S>, ConvCache<S>) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let cols = self.patches(x);
        let ncols = x.cols();
        let mut y = Fm::zeros(self.cout, x.n, x.h, x.w);
        S::gemm(self.cout, self.fan_in(), ncols, S::one(), weight, false, &cols, false, S::zero(), &mut y.data);
        if let Some(lr) = lowrank {
            let mut mid = vec![S::zero(); lr.rank * ncols];
            S::gemm(lr.rank, self.fan_in(), ncols, S::one(), lr.down, false, &cols, false, S::zero(), &mut mid);
            S::gemm(self.cout, lr.rank, ncols, lr.scale, lr.up, false, &mid, false, S::one(), &mut y.data);
        }
        for (o, b) in bias.iter().enumerate() {
            for v in &mut y.data[o * ncols..(o + 1) * ncols] {
                *v += *b;
            }
        }
        (y, ConvCache { cols, n: x.n, h: x.h, w: x.w })
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward<S: Scalar>(&self, weight: &[S], cache: &ConvCache<S>, dy: &Fm<S>) -> (Fm<S>, Vec<S>, Vec<S>) {
        let ncols = dy.cols();
        let mut dw = vec![S::zero(); self.cout * self.fan_in()];
        S::gemm(self.cout, ncols, self.fan_in(), S::one(), &dy.data, false, &cache.cols, true, S::zero(), &mut dw);
        let db = dy.data.chunks_exact(ncols).map(|r| r.iter().copied().sum()).collect();
        let mut dcols = vec![S::zero(); self.fan_in() * ncols];
        S::gemm(self.fan_in(), self.cout, ncols, S::one(), weight, true, &dy.data, false, S::zero(), &mut dcols);
        let dx = if self.k == 3 {
            col2im3(&dcols, self.cin, cache.n, cache.h, cache.w)
        } else {
            Fm::from_vec(self.cin, cache.n, cache.h, cache.w, dcols)
        };
        (dx, dw, db)
    }

    /// Runs backward and accumulates the parameter gradients.
    pub fn backward_into<S: Scalar>(
        &self,
        weight: &[S],
        cache: &ConvCache<S>,
        dy: &Fm<S>,
        grads: &mut Grads<S>,
    ) -> Fm<S> {
        let (dx, dw, db) = self.backward(weight, cache, dy);
        grads.accumulate(self.w, &dw);
        grads.accumulate(self.b, &db);
        dx
    }
}

/// Dense layer acting on `in x N` column batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let wv = match init {
            Init::Scaled(gain) => normal_vec(rng, fan_out * fan_in, gain / (fan_in as f64).sqrt()),
            Init::Zero => vec![S::zero(); fan_out * fan_in],
        };
        let w = ps.add(format!("{name}.weight"), &[fan_out, fan_in], wv);
        let b = ps.add(format!("{name}.bias"), &[fan_out], vec![S::zero(); fan_out]);
        Self { w, b, fan_in, fan_out }
    }

    /// `x` is `fan_in x n`, result `fan_out x n`.
    pub fn forward<S: Scalar>(&self, ps: &ParamSet<S>, x: &[S], n: usize) -> Vec<S> {
        let mut y = vec![S::zero(); self.fan_out * n];
        S::gemm(self.fan_out, self.fan_in, n, S::one(), ps.get(self.w), false, x, false, S::zero(), &mut y);
        for (o, b) in ps.get(self.b).iter().enumerate() {
            for v in &mut y[o * n..(o + 1) * n] {
                *v += *b;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward<S: Scalar>(&self, ps: &ParamSet<S>, x: &[S], dy: &[S], n: usize, grads: &mut Grads<S>) -> Vec<S> {
        let mut dw = vec![S::zero(); self.fan_out * self.fan_in];
        S::gemm(self.fan_out, n, self.fan_in, S::one(), dy, false, x, true, S::zero(), &mut dw);
        grads.accumulate(self.w, &dw);
        let db: Vec<S> = dy.chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
        grads.accumulate(self.b, &db);
        let mut dx = vec![S::zero(); self.fan_in * n];
        S::gemm(self.fan_in, self.fan_out, n, S::one(), ps.get(self.w), true, dy, false, S::zero(), &mut dx);
        dx
    }
}
