//! Parametric light materials on a pure black background.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LightImage, CHANNELS, MIN_SIDE};
use crate::scalar::Scalar;

/// Upper bound on the lit fraction of any rendered light.
pub const MAX_FOOTPRINT: f64 = 0.38;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightKind {
    LensFlare,
    Beam,
    Glow,
    Streak,
    Bokeh,
    RainbowArc,
}

impl LightKind {
    pub const ALL: [LightKind; 6] =
        [LightKind::LensFlare, LightKind::Beam, LightKind::Glow, LightKind::Streak, LightKind::Bokeh, LightKind::RainbowArc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LightKind::LensFlare => "lens_flare",
            LightKind::Beam => "beam",
            LightKind::Glow => "glow",
            LightKind::Streak => "streak",
            LightKind::Bokeh => "bokeh",
            LightKind::RainbowArc => "rainbow_arc",
        }
    }
}

impl fmt::Display for LightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown light kind {s:?}")))
    }
}

fn default_resolution() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub seed: u64,
    pub kind: LightKind,
    /// Anchor in normalized `(x, y)` image coordinates.
    pub position: (f64, f64),
    pub scale: f64,
    pub hue: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl LightSpec {
    /// Draws position, scale and hue from `seed`.
    pub fn random(seed: u64, kind: LightKind, resolution: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11_6874);
        Self {
            seed,
            kind,
            position: (rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)),
            scale: rng.gen_range(0.7..1.3),
            hue: rng.gen_range(0.0..1.0),
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (x, y) = self.position;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::invalid(format!("light position {:?} outside [0,1]^2", self.position)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("light scale {} must be positive", self.scale)));
        }
        if !(0.0..1.0).contains(&self.hue) {
            return Err(Error::invalid(format!("light hue {} outside [0,1)", self.hue)));
        }
        if self.resolution < MIN_SIDE {
            return Err(Error::invalid(format!("resolution {} below {MIN_SIDE}", self.resolution)));
        }
        Ok(())
    }
}

pub(crate) fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// `(1 - x)^p` on `[0, 1)`, exactly zero from 1 on.
fn falloff(x: f64, p: i32) -> f64 {
    if x >= 1.0 {
        0.0
    } else {
        (1.0 - x.max(0.0)).powi(p)
    }
}

struct Field {
    side: usize,
    /// Intensity in [0, 1] per pixel.
    f: Vec<f64>,
    /// Per-pixel hue override (rainbow).
    hue: Option<Vec<f64>>,
}

fn render_field(spec: &LightSpec, rng: &mut ChaCha8Rng) -> Field {
    let n = spec.resolution;
    let (px, py) = spec.position;
    let s = spec.scale;
    let mut f = vec![0.0; n * n];
    let mut hue = None;
    let coord = |i: usize| (i as f64 + 0.5) / n as f64;
    let paint = |f: &mut Vec<f64>, g: &dyn Fn(f64, f64) -> f64| {
        for r in 0..n {
            for c in 0..n {
                let v = g(coord(c), coord(r));
                let slot = &mut f[r * n + c];
                *slot = (*slot + v).min(1.0);
            }
        }
    };
    match spec.kind {
        LightKind::Glow => {
            let rad = rng.gen_range(0.16..0.26) * s;
            paint(&mut f, &|x, y| falloff(((x - px).hypot(y - py) / rad).powi(2), 2));
        }
        LightKind::LensFlare => {
            let core = rng.gen_range(0.08..0.12) * s;
            let ring = rng.gen_range(0.16..0.22) * s;
            let ring_w = 0.02 * s + 0.5 / n as f64;
            let ring_k = rng.gen_range(0.3..0.5);
            paint(&mut f, &|x, y| {
                let d = (x - px).hypot(y - py);
                falloff((d / core).powi(2), 2) + ring_k * falloff((d - ring).abs() / ring_w, 1)
            });
            let (vx, vy) = (0.5 - px, 0.5 - py);
            for _ in 0..rng.gen_range(2..4) {
                let t = rng.gen_range(0.6..1.8);
                let (gx, gy) = (px + t * vx, py + t * vy);
                let gr = rng.gen_range(0.03..0.06) * s + 0.5 / n as f64;
                let gk = rng.gen_range(0.3..0.6);
                paint(&mut f, &|x, y| gk * falloff((x - gx).hypot(y - gy) / gr, 1).sqrt());
            }
        }
        LightKind::Beam => {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (dx, dy) = (theta.cos(), theta.sin());
            let len = rng.gen_range(0.45..0.75) * s;
            let spread = rng.gen_range(0.25..0.45);
            let base_w = 1.0 / n as f64;
            paint(&mut f, &|x, y| {
                let (rx, ry) = (x - px, y - py);
                let along = rx * dx + ry * dy;
                if along <= 0.0 {
                    return 0.0;
                }
                let across = (rx * dy - ry * dx).abs();
                falloff(along / len, 1) * falloff(across / (along * spread + base_w), 2)
            });
        }
        LightKind::Streak => {
            let theta = rng.gen_range(-0.3..0.3);
            let (dx, dy) = (f64::cos(theta), f64::sin(theta));
            let half_len = rng.gen_range(0.3..0.5) * s;
            let half_w = rng.gen_range(0.02..0.04) * s + 0.5 / n as f64;
            paint(&mut f, &|x, y| {
                let (rx, ry) = (x - px, y - py);
                let along = (rx * dx + ry * dy).abs();
                let across = (rx * dy - ry * dx).abs();
                falloff(along / half_len, 2) * falloff(across / half_w, 1)
            });
        }
        LightKind::Bokeh => {
            for _ in 0..rng.gen_range(3..7) {
                let a = rng.gen_range(0.0..2.0 * PI);
                let d = rng.gen_range(0.0..0.22) * s;
                let (cx, cy) = (px + d * a.cos(), py + d * a.sin());
                let rad = rng.gen_range(0.03..0.07) * s + 0.5 / n as f64;
                let k = rng.gen_range(0.4..0.9);
                let edge = 0.35 * rad;
                paint(&mut f, &|x, y| {
                    let dist = (x - cx).hypot(y - cy);
                    if dist >= rad {
                        0.0
                    } else {
                        k * ((rad - dist) / edge).min(1.0)
                    }
                });
            }
        }
        LightKind::RainbowArc => {
            let rad = rng.gen_range(0.25..0.4) * s;
            let w = rng.gen_range(0.04..0.07) * s + 0.5 / n as f64;
            let start = rng.gen_range(0.0..2.0 * PI);
            let span = rng.gen_range(0.5..0.9) * PI;
            let in_arc = move |x: f64, y: f64| (f64::atan2(y - py, x - px) - start).rem_euclid(2.0 * PI) < span;
            paint(&mut f, &|x, y| {
                if in_arc(x, y) {
                    falloff(((x - px).hypot(y - py) - rad).abs() / w, 1)
                } else {
                    0.0
                }
            });
            let mut hues = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    let d = (coord(c) - px).hypot(coord(r) - py);
                    hues[r * n + c] = (spec.hue + 0.8 * ((d - rad + w) / (2.0 * w)).clamp(0.0, 1.0)).rem_euclid(1.0);
                }
            }
            hue = Some(hues);
        }
    }
    Field { side: n, f, hue }
}

/// Zeros the weakest lit pixels until at most `MAX_FOOTPRINT` of the frame is lit.
fn trim_footprint(f: &mut [f64]) {
    let limit = (MAX_FOOTPRINT * f.len() as f64).floor() as usize;
    let lit = f.iter().filter(|&&v| v > 0.0).count();
    if lit <= limit {
        return;
    }
    let mut order: Vec<usize> = (0..f.len()).filter(|&i| f[i] > 0.0).collect();
    order.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));
    for &i in &order[..lit - limit] {
        f[i] = 0.0;
    }
}

/// Renders a light material; a pure function of `spec`.
pub fn gen_light_material<S: Scalar>(spec: &LightSpec) -> Result<LightImage<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let peak = rng.gen_range(0.75..1.0);
    let mut field = render_field(spec, &mut rng);
    trim_footprint(&mut field.f);
    let n = field.side;
    let mut data = vec![S::zero(); n * n * CHANNELS];
    for (i, &v) in field.f.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let h = field.hue.as_ref().map_or(spec.hue, |hs| hs[i]);
        let tint = hsv(h, 0.75, 1.0);
        let core = 0.6 * v * v;
        for ch in 0..CHANNELS {
            let c = tint[ch] * (1.0 - core) + core;
            data[i * CHANNELS + ch] = S::lit((peak * v * c).clamp(0.0, 1.0));
        }
    }
    LightImage::new(n, n, data)
}
