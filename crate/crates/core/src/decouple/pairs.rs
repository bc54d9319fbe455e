//! Training-pair construction for the removal and extraction models.

use rand::Rng;

use crate::error::Result;
use crate::imagecore::{clamp01, composite, mask_background_light, Image, LightImage, Mask, SynthesisParams};
use crate::scalar::Scalar;

/// How a removal input was produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RemovalSource {
    Composite(SynthesisParams),
    Perturbed { gamma: f64, gains: [f64; 3] },
}

#[derive(Clone, Debug)]
pub struct RemovalPair<S> {
    pub input: Image<S>,
    pub target: Image<S>,
    pub source: RemovalSource,
}

#[derive(Clone, Debug)]
pub struct ExtractionPair<S> {
    pub input: Image<S>,
    pub target: LightImage<S>,
    pub params: SynthesisParams,
}

/// `clamp(gain_c * v^gamma)` per channel.
pub fn photometric_perturb<S: Scalar>(content: &Image<S>, gamma: f64, gains: [f64; 3]) -> Image<S> {
    let (h, w) = content.dims();
    let g = S::lit(gamma);
    let data = content
        .data()
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| clamp01(S::lit(gains[c]) * px[c].powf(g))))
        .collect();
    Image::new(h, w, data).expect("same dims as a valid image")
}

/// Draws `a, b ~ U(0, 1)`.
pub fn draw_params<R: Rng + ?Sized>(rng: &mut R) -> SynthesisParams {
    SynthesisParams::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)).expect("in range")
}

/// With probability `synth_mix` an additive composite of `content` and the
/// background part of `light`; otherwise a global photometric perturbation.
pub fn make_removal_pair<S: Scalar, R: Rng + ?Sized>(
    content: &Image<S>,
    mask: &Mask,
    light: &LightImage<S>,
    synth_mix: f64,
    rng: &mut R,
) -> Result<RemovalPair<S>> {
    if rng.gen_bool(synth_mix.clamp(0.0, 1.0)) {
        let params = draw_params(rng);
        let bg = mask_background_light(light, mask)?;
        Ok(RemovalPair { input: composite(content, &bg, params)?, target: content.clone(), source: RemovalSource::Composite(params) })
    } else {
        let gamma = 2f64.powf(rng.gen_range(-1.0..=1.0));
        let gains = [rng.gen_range(0.7..=1.3), rng.gen_range(0.7..=1.3), rng.gen_range(0.7..=1.3)];
        Ok(RemovalPair {
            input: photometric_perturb(content, gamma, gains),
            target: content.clone(),
            source: RemovalSource::Perturbed { gamma, gains },
        })
    }
}

/// Input composites the masked light; the target is the light actually added.
pub fn make_extraction_pair<S: Scalar, R: Rng + ?Sized>(
    content: &Image<S>,
    mask: &Mask,
    light: &LightImage<S>,
    rng: &mut R,
) -> Result<ExtractionPair<S>> {
    extraction_pair_with(content, mask, light, draw_params(rng))
}

pub fn extraction_pair_with<S: Scalar>(
    content: &Image<S>,
    mask: &Mask,
    light: &LightImage<S>,
    params: SynthesisParams,
) -> Result<ExtractionPair<S>> {
    let bg = mask_background_light(light, mask)?;
    let input = composite(content, &bg, params)?;
    let b = S::lit(params.b);
    let target = LightImage::from_image(bg.as_image().map(|v| v * b));
    Ok(ExtractionPair { input, target, params })
}
