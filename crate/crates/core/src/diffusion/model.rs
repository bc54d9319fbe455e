//! Forward process, noise-prediction loss with gradients, and the
//! deterministic sampler over a denoiser with optional adapter and control.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::adapter::LowRankAdapter;
use super::control::ControlBranch;
use super::schedule::NoiseSchedule;
use super::unet::{Denoiser, Weights, NOISE_CHANNELS};
use crate::error::{Error, Result};
use crate::imagecore::{clamp01, Image, CHANNELS};
use crate::nn::{Fm, Grads, ParamSet};
use crate::scalar::Scalar;

/// A denoiser plus the weights to run it with.
///
/// `weights` is either the base parameter set or one already merged with an
/// adapter. `lora` is the unmerged alternative and is forward-only.
#[derive(Clone, Copy)]
pub struct ModelRef<'a, S> {
    pub denoiser: &'a Denoiser<S>,
    pub weights: &'a ParamSet<S>,
    pub lora: Option<&'a LowRankAdapter<S>>,
    pub control: Option<&'a ControlBranch<S>>,
}

impl<'a, S: Scalar> ModelRef<'a, S> {
    pub fn base(denoiser: &'a Denoiser<S>) -> Self {
        Self { denoiser, weights: denoiser.params(), lora: None, control: None }
    }

    pub fn with_weights(denoiser: &'a Denoiser<S>, weights: &'a ParamSet<S>) -> Self {
        Self { denoiser, weights, lora: None, control: None }
    }

    pub fn with_control(mut self, control: &'a ControlBranch<S>) -> Self {
        self.control = Some(control);
        self
    }

    pub fn with_unmerged(mut self, lora: &'a LowRankAdapter<S>) -> Self {
        self.lora = Some(lora);
        self
    }
}

/// Conditioning for one batch.
#[derive(Clone, Debug)]
pub struct Conditioning<S> {
    pub cond: Fm<S>,
    pub class: Option<Vec<usize>>,
    pub control: Option<Fm<S>>,
}

impl<S: Scalar> Conditioning<S> {
    pub fn new(cond: Fm<S>) -> Self {
        Self { cond, class: None, control: None }
    }

    pub fn with_class(mut self, class: Option<Vec<usize>>) -> Self {
        self.class = class;
        self
    }

    pub fn with_control(mut self, control: Option<Fm<S>>) -> Self {
        self.control = control;
        self
    }
}

/// Predicted noise for `x_t` at per-sample timesteps `t`.
pub fn predict_eps<S: Scalar>(model: &ModelRef<'_, S>, x_t: &Fm<S>, c: &Conditioning<S>, t: &[usize]) -> Result<Fm<S>> {
    let den = model.denoiser;
    den.check(x_t, &c.cond, t)?;
    let w = Weights { params: model.weights, lora: model.lora };
    let (temb, tcache) = den.time_embedding(model.weights, t, c.class.as_deref())?;
    let residuals = match (model.control, &c.control) {
        (Some(branch), Some(signal)) => Some(branch.forward(x_t, &c.cond, signal, &temb)?.0),
        (Some(_), None) => return Err(Error::invalid("control branch loaded but no control signal given")),
        (None, Some(_)) => return Err(Error::invalid("control signal given without a control branch")),
        (None, None) => None,
    };
    let (out, _) = den.forward_with_temb(&w, x_t, &c.cond, temb, tcache, residuals.as_deref())?;
    Ok(out)
}

/// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`, with one timestep per sample.
pub fn q_sample<S: Scalar>(x0: &Fm<S>, t: &[usize], eps: &Fm<S>, sched: &NoiseSchedule) -> Result<Fm<S>> {
    if !x0.same_shape(eps) || t.len() != x0.n {
        return Err(Error::dims("q_sample: x0, eps and timesteps disagree"));
    }
    let coefs: Vec<(S, S)> = t
        .iter()
        .map(|&ts| sched.alpha_bar(ts).map(|ab| (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()))))
        .collect::<Result<_>>()?;
    Ok(mix(x0, eps, |s| coefs[s]))
}

fn mix<S: Scalar>(a: &Fm<S>, b: &Fm<S>, coef: impl Fn(usize) -> (S, S)) -> Fm<S> {
    let p = a.plane();
    let mut out = a.clone();
    for (i, chunk) in out.data.chunks_exact_mut(p).enumerate() {
        let (ka, kb) = coef(i % a.n);
        let bb = &b.data[i * p..(i + 1) * p];
        for (o, &y) in chunk.iter_mut().zip(bb) {
            *o = ka * *o + kb * y;
        }
    }
    out
}

/// One training batch in model space (values in `[-1, 1]`).
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub x0: Fm<S>,
    pub cond: Conditioning<S>,
}

/// Noise draw shared by [`training_loss`] and [`loss_and_grads`].
pub struct NoiseDraw<S> {
    pub t: Vec<usize>,
    pub eps: Fm<S>,
}

pub fn draw_noise<S: Scalar, R: Rng + ?Sized>(x0: &Fm<S>, sched: &NoiseSchedule, rng: &mut R) -> NoiseDraw<S> {
    let t: Vec<usize> = (0..x0.n).map(|_| rng.gen_range(0..sched.steps)).collect();
    let eps = Fm::from_vec(
        x0.c,
        x0.n,
        x0.h,
        x0.w,
        (0..x0.data.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::lit(z)
            })
            .collect(),
    );
    NoiseDraw { t, eps }
}

fn check_batch<S: Scalar>(batch: &Batch<S>) -> Result<()> {
    let (x0, cond) = (&batch.x0, &batch.cond.cond);
    if x0.c != NOISE_CHANNELS {
        return Err(Error::dims(format!("target has {} channels, expected {NOISE_CHANNELS}", x0.c)));
    }
    if (x0.n, x0.h, x0.w) != (cond.n, cond.h, cond.w) {
        return Err(Error::dims(format!(
            "condition {}x{}x{} vs target {}x{}x{}",
            cond.n, cond.h, cond.w, x0.n, x0.h, x0.w
        )));
    }
    Ok(())
}

fn mse<S: Scalar>(pred: &Fm<S>, eps: &Fm<S>) -> S {
    let n = S::from_usize(pred.data.len()).unwrap();
    pred.data.iter().zip(&eps.data).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>() / n
}

/// Mean squared error between predicted and drawn noise.
pub fn training_loss<S: Scalar, R: Rng + ?Sized>(
    model: &ModelRef<'_, S>,
    batch: &Batch<S>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<S> {
    check_batch(batch)?;
    let draw = draw_noise(&batch.x0, sched, rng);
    let x_t = q_sample(&batch.x0, &draw.t, &draw.eps, sched)?;
    let pred = predict_eps(model, &x_t, &batch.cond, &draw.t)?;
    Ok(mse(&pred, &draw.eps))
}

/// Loss and gradients w.r.t. the weights in `model.weights` and the control
/// branch (when present). The adapter must be merged beforehand.
pub struct LossGrads<S> {
    pub loss: S,
    pub weights: Grads<S>,
    pub control: Option<Grads<S>>,
}

pub fn loss_and_grads<S: Scalar, R: Rng + ?Sized>(
    model: &ModelRef<'_, S>,
    batch: &Batch<S>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<LossGrads<S>> {
    if model.lora.is_some() {
        return Err(Error::invalid("merge the adapter before computing gradients"));
    }
    check_batch(batch)?;
    let den = model.denoiser;
    let c = &batch.cond;
    let draw = draw_noise(&batch.x0, sched, rng);
    let x_t = q_sample(&batch.x0, &draw.t, &draw.eps, sched)?;
    den.check(&x_t, &c.cond, &draw.t)?;

    let w = Weights::plain(model.weights);
    let (temb, tcache) = den.time_embedding(model.weights, &draw.t, c.class.as_deref())?;
    let ctrl = match (model.control, &c.control) {
        (Some(branch), Some(signal)) => Some((branch, branch.forward(&x_t, &c.cond, signal, &temb)?)),
        (None, None) => None,
        _ => return Err(Error::invalid("control branch and control signal must be given together")),
    };
    let residuals = ctrl.as_ref().map(|(_, (r, _))| r.as_slice());
    let (pred, cache) = den.forward_with_temb(&w, &x_t, &c.cond, temb, tcache, residuals)?;
    let loss = mse(&pred, &draw.eps);

    let scale = S::lit(2.0) / S::from_usize(pred.data.len()).unwrap();
    let dout = Fm { data: pred.data.iter().zip(&draw.eps.data).map(|(&a, &b)| scale * (a - b)).collect(), ..pred };
    let mut grads = model.weights.zero_grads();
    let back = den.backward(model.weights, &cache, &dout, &mut grads);
    let mut dtemb = back.dtemb;
    let control = match ctrl {
        Some((branch, (_, ccache))) => {
            let mut cg = branch.params().zero_grads();
            let dt = branch.backward(&ccache, &back.d_residuals, cache.temb(), &mut cg);
            dtemb.iter_mut().zip(&dt).for_each(|(a, b)| *a += *b);
            Some(cg)
        }
        None => None,
    };
    den.time_backward(model.weights, &cache, &dtemb, &mut grads);
    Ok(LossGrads { loss, weights: grads, control })
}

/// Standard-normal starting noise for one sample, keyed by `seed`.
pub fn initial_noise<S: Scalar>(c: usize, h: usize, w: usize, seed: u64) -> Fm<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Fm::from_vec(
        c,
        1,
        h,
        w,
        (0..c * h * w)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                S::lit(z)
            })
            .collect(),
    )
}

/// Deterministic (eta = 0) sampler with x0 clipping to `[-1, 1]`.
///
/// One seed per batch sample; returns the final x0 estimate in model space.
pub fn ddim_sample<S: Scalar>(
    model: &ModelRef<'_, S>,
    c: &Conditioning<S>,
    n_steps: usize,
    sched: &NoiseSchedule,
    seeds: &[u64],
) -> Result<Fm<S>> {
    if n_steps < 1 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    let cond = &c.cond;
    if seeds.len() != cond.n {
        return Err(Error::dims(format!("{} seeds for batch of {}", seeds.len(), cond.n)));
    }
    let steps = sched.sampling_timesteps(n_steps)?;
    let noise: Vec<Fm<S>> = seeds.iter().map(|&s| initial_noise(NOISE_CHANNELS, cond.h, cond.w, s)).collect();
    let mut x = Fm::stack(&noise);
    let n = cond.n;
    let (lo, hi) = (-S::one(), S::one());
    for (k, &t) in steps.iter().enumerate() {
        let ab = sched.alpha_bar(t)?;
        let ab_prev = match steps.get(k + 1) {
            Some(&tp) => sched.alpha_bar(tp)?,
            None => 1.0,
        };
        let eps = predict_eps(model, &x, c, &vec![t; n])?;
        let (sa, sb) = (S::lit(ab.sqrt()), S::lit((1.0 - ab).sqrt()));
        let (pa, pb) = (S::lit(ab_prev.sqrt()), S::lit((1.0 - ab_prev).sqrt()));
        for (xv, &e) in x.data.iter_mut().zip(&eps.data) {
            let x0 = ((*xv - sb * e) / sa).max(lo).min(hi);
            let e_adj = (*xv - sa * x0) / sb;
            *xv = pa * x0 + pb * e_adj;
        }
    }
    Ok(x)
}

/// Packs images into a batch mapped from `[0, 1]` to `[-1, 1]`.
pub fn to_model_space<S: Scalar>(images: &[&Image<S>]) -> Result<Fm<S>> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = first.dims();
    let n = images.len();
    let mut fm = Fm::zeros(CHANNELS, n, h, w);
    let two = S::lit(2.0);
    for (i, img) in images.iter().enumerate() {
        first.ensure_same_dims(img, "batch image")?;
        for (p, px) in img.data().chunks_exact(CHANNELS).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                fm.data[(ch * n + i) * h * w + p] = two * v - S::one();
            }
        }
    }
    Ok(fm)
}

/// Inverse of [`to_model_space`], clamping to `[0, 1]`.
pub fn from_model_space<S: Scalar>(fm: &Fm<S>) -> Result<Vec<Image<S>>> {
    if fm.c != CHANNELS {
        return Err(Error::dims(format!("{} channels cannot form an RGB image", fm.c)));
    }
    let half = S::lit(0.5);
    (0..fm.n)
        .map(|i| {
            let plane = fm.h * fm.w;
            let mut data = vec![S::zero(); plane * CHANNELS];
            for ch in 0..CHANNELS {
                let src = &fm.data[(ch * fm.n + i) * plane..][..plane];
                for (p, &v) in src.iter().enumerate() {
                    data[p * CHANNELS + ch] = clamp01((v + S::one()) * half);
                }
            }
            Image::new(fm.h, fm.w, data)
        })
        .collect()
}
