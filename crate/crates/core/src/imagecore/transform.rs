//! Position, direction and intensity controls for a light image.
//!
//! Application order is fixed: horizontal flip, vertical flip, counter-clockwise
//! quarter turns, translation with zero fill, intensity scaling, clamp.

use serde::{Deserialize, Serialize};

use super::raster::{clamp01, Image, LightImage, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightTransform {
    /// Pixels, positive moves right.
    pub dx: i64,
    /// Pixels, positive moves down.
    pub dy: i64,
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise 90 degree units, 0..=3.
    pub quarter_turns: u8,
    pub intensity: f64,
}

impl Default for LightTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl LightTransform {
    pub const IDENTITY: LightTransform =
        LightTransform { dx: 0, dy: 0, hflip: false, vflip: false, quarter_turns: 0, intensity: 1.0 };

    pub fn translate(dx: i64, dy: i64) -> Self {
        Self { dx, dy, ..Self::IDENTITY }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Output dimensions for a `height x width` input.
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// Checks the field ranges against an input of `height x width`.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.quarter_turns > 3 {
            return Err(Error::invalid(format!("quarter_turns {} not in 0..=3", self.quarter_turns)));
        }
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            return Err(Error::invalid(format!("intensity {} must be finite and >= 0", self.intensity)));
        }
        let (h, w) = self.output_dims(height, width);
        if self.dx.unsigned_abs() as usize >= w {
            return Err(Error::invalid(format!("|dx| = {} must be below width {w}", self.dx.abs())));
        }
        if self.dy.unsigned_abs() as usize >= h {
            return Err(Error::invalid(format!("|dy| = {} must be below height {h}", self.dy.abs())));
        }
        Ok(())
    }
}

pub fn flip_horizontal<S: Scalar>(img: &Image<S>) -> Image<S> {
    let (h, w) = img.dims();
    remap(img, h, w, |r, c| Some((r, w - 1 - c)))
}

pub fn flip_vertical<S: Scalar>(img: &Image<S>) -> Image<S> {
    let (h, w) = img.dims();
    remap(img, h, w, |r, c| Some((h - 1 - r, c)))
}

/// Counter-clockwise rotation by `turns` quarter turns.
pub fn rotate_quarter<S: Scalar>(img: &Image<S>, turns: u8) -> Image<S> {
    let (h, w) = img.dims();
    match turns % 4 {
        0 => img.clone(),
        // input (r, c) lands at (w-1-c, r)
        1 => remap(img, w, h, |r, c| Some((c, w - 1 - r))),
        2 => remap(img, h, w, |r, c| Some((h - 1 - r, w - 1 - c))),
        _ => remap(img, w, h, |r, c| Some((h - 1 - c, r))),
    }
}

/// Shifts content by `(dx, dy)`; uncovered pixels become 0.
pub fn translate<S: Scalar>(img: &Image<S>, dx: i64, dy: i64) -> Image<S> {
    let (h, w) = img.dims();
    remap(img, h, w, |r, c| {
        let sr = r as i64 - dy;
        let sc = c as i64 - dx;
        (sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w).then(|| (sr as usize, sc as usize))
    })
}

/// `out(r, c) = img(src(r, c))`, or 0 when `src` is `None`.
fn remap<S: Scalar>(
    img: &Image<S>,
    out_h: usize,
    out_w: usize,
    src: impl Fn(usize, usize) -> Option<(usize, usize)>,
) -> Image<S> {
    let mut data = vec![S::zero(); out_h * out_w * CHANNELS];
    for r in 0..out_h {
        for c in 0..out_w {
            if let Some((sr, sc)) = src(r, c) {
                let o = (r * out_w + c) * CHANNELS;
                data[o..o + CHANNELS].copy_from_slice(&img.pixel(sr, sc));
            }
        }
    }
    Image::from_parts_unchecked(out_h, out_w, data)
}

pub fn apply_transform<S: Scalar>(light: &LightImage<S>, t: &LightTransform) -> Result<LightImage<S>> {
    let (h, w) = light.dims();
    t.validate(h, w)?;
    let mut img = light.as_image().clone();
    if t.hflip {
        img = flip_horizontal(&img);
    }
    if t.vflip {
        img = flip_vertical(&img);
    }
    img = rotate_quarter(&img, t.quarter_turns);
    if t.dx != 0 || t.dy != 0 {
        img = translate(&img, t.dx, t.dy);
    }
    if t.intensity != 1.0 {
        let k = S::lit(t.intensity);
        img = img.map(|v| clamp01(v * k));
    }
    Ok(LightImage::from_image(img))
}

/// Undoes the geometric part of `t`: translate back, rotate back, unflip.
pub fn invert_geometry<S: Scalar>(light: &LightImage<S>, t: &LightTransform) -> LightImage<S> {
    let mut img = translate(light.as_image(), -t.dx, -t.dy);
    img = rotate_quarter(&img, (4 - t.quarter_turns % 4) % 4);
    if t.vflip {
        img = flip_vertical(&img);
    }
    if t.hflip {
        img = flip_horizontal(&img);
    }
    LightImage::from_image(img)
}
