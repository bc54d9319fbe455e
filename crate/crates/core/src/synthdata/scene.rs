//! Light-free content scenes with foreground-object masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::light::hsv;
use crate::error::{Error, Result};
use crate::imagecore::{Image, Mask, CHANNELS, MIN_SIDE};
use crate::scalar::Scalar;

pub const MAX_OBJECTS: usize = 5;

/// Luminance shared by every default palette entry.
const PALETTE_LUMA: f64 = 0.42;
const PALETTE_SIZE: usize = 8;

/// Equal-luminance colors with evenly spaced hues.
pub fn default_palette() -> Vec<[f64; 3]> {
    (0..PALETTE_SIZE)
        .map(|i| {
            let c = hsv(i as f64 / PALETTE_SIZE as f64, 0.45, 1.0);
            let y = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
            c.map(|v| v * PALETTE_LUMA / y)
        })
        .collect()
}

fn is_default_palette(p: &[[f64; 3]]) -> bool {
    p == default_palette().as_slice()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub resolution: usize,
    pub num_objects: usize,
    #[serde(default = "default_palette", skip_serializing_if = "is_default_palette")]
    pub palette: Vec<[f64; 3]>,
}

impl SceneSpec {
    /// Object count drawn from `seed`, default palette.
    pub fn random(seed: u64, resolution: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce_e000);
        Self { seed, resolution, num_objects: rng.gen_range(1..=MAX_OBJECTS), palette: default_palette() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_OBJECTS).contains(&self.num_objects) {
            return Err(Error::invalid(format!("num_objects {} outside [1, {MAX_OBJECTS}]", self.num_objects)));
        }
        if self.resolution < MIN_SIDE {
            return Err(Error::invalid(format!("resolution {} below {MIN_SIDE}", self.resolution)));
        }
        if self.palette.len() < 2 {
            return Err(Error::invalid("palette needs at least two colors"));
        }
        if self.palette.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("palette colors must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, cos: f64, sin: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (cx, cy) = (rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85));
        match rng.gen_range(0..3) {
            0 => Shape::Disc { cx, cy, r: rng.gen_range(0.08..0.2) },
            1 => {
                let (hw, hh) = (rng.gen_range(0.07..0.2), rng.gen_range(0.07..0.2));
                Shape::Rect { x0: cx - hw, y0: cy - hh, x1: cx + hw, y1: cy + hh }
            }
            _ => {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                Shape::Ellipse { cx, cy, rx: rng.gen_range(0.08..0.22), ry: rng.gen_range(0.05..0.12), cos: a.cos(), sin: a.sin() }
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
            Shape::Rect { x0, y0, x1, y1 } => (x0..=x1).contains(&x) && (y0..=y1).contains(&y),
            Shape::Ellipse { cx, cy, rx, ry, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
        }
    }
}

struct Object {
    shape: Shape,
    color: [f64; 3],
    /// Linear shading gradient `(gx, gy)`.
    shade: (f64, f64),
}

/// Renders a scene and the union mask of its objects; a pure function of `spec`.
pub fn gen_content_scene<S: Scalar>(spec: &SceneSpec) -> Result<(Image<S>, Mask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.resolution;
    let pick = |rng: &mut ChaCha8Rng| spec.palette[rng.gen_range(0..spec.palette.len())];
    let (bg_top, bg_bottom) = (pick(&mut rng), pick(&mut rng));
    let bg_level = (rng.gen_range(0.85..1.0), rng.gen_range(0.85..1.0));
    let tex = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(0.0..6.3), rng.gen_range(0.01..0.03));
    let objects: Vec<Object> = (0..spec.num_objects)
        .map(|_| Object {
            shape: Shape::random(&mut rng),
            color: pick(&mut rng),
            shade: (rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)),
        })
        .collect();

    let mut data = vec![S::zero(); n * n * CHANNELS];
    let mut mask = vec![0u8; n * n];
    for r in 0..n {
        let y = (r as f64 + 0.5) / n as f64;
        for c in 0..n {
            let x = (c as f64 + 0.5) / n as f64;
            let texture = 1.0 + tex.3 * (std::f64::consts::TAU * (tex.0 * x + tex.1 * y) + tex.2).sin();
            let level = bg_level.0 + (bg_level.1 - bg_level.0) * y;
            let mut rgb: [f64; 3] = std::array::from_fn(|k| (bg_top[k] * (1.0 - y) + bg_bottom[k] * y) * level * texture);
            for obj in &objects {
                if obj.shape.contains(x, y) {
                    let s = 1.0 + obj.shade.0 * (x - 0.5) + obj.shade.1 * (y - 0.5);
                    rgb = obj.color.map(|v| v * s * texture);
                    mask[r * n + c] = 1;
                }
            }
            for k in 0..CHANNELS {
                data[(r * n + c) * CHANNELS + k] = S::lit(rgb[k].clamp(0.0, 1.0));
            }
        }
    }
    Ok((Image::new(n, n, data)?, Mask::new(n, n, mask)?))
}
