use serde::{Deserialize, Serialize};

use super::raster::{clamp01, Image, LightImage, Mask, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Coefficients of the additive synthesis `a * content + b * light`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub a: f64,
    pub b: f64,
}

impl SynthesisParams {
    pub const UNIT: SynthesisParams = SynthesisParams { a: 1.0, b: 1.0 };

    /// `a` in `[0, 1]`; `b` in `[0, 2]` (above 1 only for intensity boosts).
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=2.0).contains(&b) {
            return Err(Error::invalid(format!("synthesis params out of range: a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }
}

/// `clamp(a * content + b * light, 0, 1)` elementwise.
pub fn composite<S: Scalar>(content: &Image<S>, light: &LightImage<S>, params: SynthesisParams) -> Result<Image<S>> {
    content.ensure_same_dims(light.as_image(), "composite")?;
    let (a, b) = (S::lit(params.a), S::lit(params.b));
    let data = content
        .data()
        .iter()
        .zip(light.data())
        .map(|(&i, &l)| clamp01(a * i + b * l))
        .collect();
    let (h, w) = content.dims();
    Ok(Image::from_parts_unchecked(h, w, data))
}

/// Keeps only the light outside the foreground: `light * (1 - fg)`.
pub fn mask_background_light<S: Scalar>(light: &LightImage<S>, fg: &Mask) -> Result<LightImage<S>> {
    if light.dims() != fg.dims() {
        return Err(Error::dims(format!("mask {:?} vs light {:?}", fg.dims(), light.dims())));
    }
    let data = light
        .data()
        .chunks_exact(CHANNELS)
        .zip(fg.data())
        .flat_map(|(px, &m)| {
            let keep = m == 0;
            px.iter().map(move |&v| if keep { v } else { S::zero() })
        })
        .collect();
    let (h, w) = light.dims();
    Ok(LightImage::from_image(Image::from_parts_unchecked(h, w, data)))
}

/// `clamp(image_with_light - content, 0, 1)`.
pub fn residual_light<S: Scalar>(image_with_light: &Image<S>, content: &Image<S>) -> Result<LightImage<S>> {
    image_with_light.ensure_same_dims(content, "residual_light")?;
    let data = image_with_light.data().iter().zip(content.data()).map(|(&l, &i)| clamp01(l - i)).collect();
    let (h, w) = content.dims();
    Ok(LightImage::from_image(Image::from_parts_unchecked(h, w, data)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(v: f64) -> Image<f64> {
        Image::filled(8, 8, v).unwrap()
    }

    fn light(v: f64) -> LightImage<f64> {
        LightImage::from_image(flat(v))
    }

    #[test]
    fn composite_examples() {
        let out = composite(&flat(0.5), &light(0.25), SynthesisParams::UNIT).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.75));
        let out = composite(&flat(0.9), &light(0.8), SynthesisParams::UNIT).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        let content = Image::<f64>::from_fn(8, 8, |r, c, ch| (r * 8 + c + ch) as f64 / 80.0).unwrap();
        let out = composite(&content, &light(0.7), SynthesisParams::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(out, content);
    }

    #[test]
    fn composite_rejects_mismatch() {
        let small = Image::<f64>::zeros(8, 8).unwrap();
        let big = LightImage::<f64>::zeros(8, 9).unwrap();
        assert!(matches!(composite(&small, &big, SynthesisParams::UNIT), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn params_range() {
        assert!(SynthesisParams::new(1.1, 0.5).is_err());
        assert!(SynthesisParams::new(0.5, 2.5).is_err());
        assert!(SynthesisParams::new(0.5, 1.5).is_ok());
    }

    #[test]
    fn mask_examples() {
        let l = LightImage::from_image(Image::<f64>::from_fn(8, 8, |r, c, _| (r + c) as f64 / 20.0).unwrap());
        assert_eq!(mask_background_light(&l, &Mask::filled(8, 8, false)).unwrap(), l);
        assert!(mask_background_light(&l, &Mask::filled(8, 8, true)).unwrap().is_black());
        let left = Mask::from_fn(8, 8, |_, c| c < 4);
        let out = mask_background_light(&l, &left).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let want = if c < 4 { 0.0 } else { l.as_image().get(r, c, 0) };
                assert_eq!(out.as_image().get(r, c, 0), want);
            }
        }
        assert!(mask_background_light(&l, &Mask::filled(8, 7, false)).is_err());
    }

    #[test]
    fn residual_examples() {
        let r = residual_light(&flat(1.0), &flat(0.8)).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
        assert!(residual_light(&flat(0.4), &flat(0.4)).unwrap().is_black());
    }

    fn raster(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, len)
    }

    proptest! {
        #[test]
        fn composite_is_linear_where_unclamped(i in raster(192), l in raster(192), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let content = Image::new(8, 8, i).unwrap();
            let lt = LightImage::new(8, 8, l).unwrap();
            let out = composite(&content, &lt, SynthesisParams { a, b }).unwrap();
            for k in 0..192 {
                let raw = a * content.data()[k] + b * lt.data()[k];
                prop_assert!((0.0..=1.0).contains(&out.data()[k]));
                if raw <= 1.0 {
                    prop_assert!((out.data()[k] - a * content.data()[k] - b * lt.data()[k]).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn mask_partition_reassembles(l in raster(192), bits in prop::collection::vec(0u8..=1, 64)) {
            let lt = LightImage::new(8, 8, l).unwrap();
            let fg = Mask::new(8, 8, bits).unwrap();
            let x = mask_background_light(&lt, &fg).unwrap();
            let y = mask_background_light(&lt, &fg.invert()).unwrap();
            for k in 0..192 {
                prop_assert_eq!(x.data()[k] + y.data()[k], lt.data()[k]);
            }
        }

        #[test]
        fn residual_inverts_unclamped_addition(i in prop::collection::vec(0.0f64..=0.5, 192), l in prop::collection::vec(0.0f64..=0.5, 192)) {
            let content = Image::new(8, 8, i).unwrap();
            let lt = LightImage::new(8, 8, l).unwrap();
            let lit = composite(&content, &lt, SynthesisParams::UNIT).unwrap();
            let back = residual_light(&lit, &content).unwrap();
            for k in 0..192 {
                prop_assert!((back.data()[k] - lt.data()[k]).abs() < 1e-12);
            }
        }
    }
}
