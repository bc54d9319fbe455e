//! Extracted-light presets: `<dir>/<id>.png`, with an optional
//! `<dir>/<id>.json` holding `{"kind": ...}`.

use std::path::Path;

use lightfx_core::imagecore::{decode_image, encode_image, Image};
use lightfx_core::synthdata::LightKind;
use serde::Deserialize;

use crate::api::LightPreset;

pub const THUMBNAIL_SIDE: usize = 64;

#[derive(Deserialize)]
struct Sidecar {
    kind: Option<LightKind>,
}

/// Nearest-neighbour downscale by the smallest integer stride that fits
/// `THUMBNAIL_SIDE`.
pub fn thumbnail(img: &Image<f32>) -> Image<f32> {
    let (h, w) = img.dims();
    let stride = h.max(w).div_ceil(THUMBNAIL_SIDE).max(1);
    if stride == 1 {
        return img.clone();
    }
    Image::from_fn(h.div_ceil(stride), w.div_ceil(stride), |r, c, ch| img.get(r * stride, c * stride, ch))
        .expect("thumbnail dims are positive")
}

/// Presets sorted by id; unreadable entries are skipped.
pub fn scan(dir: &Path) -> Vec<LightPreset> {
    let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut out: Vec<LightPreset> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .filter_map(|p| {
            let id = p.file_stem()?.to_str()?.to_string();
            let img: Image<f32> = decode_image(&std::fs::read(&p).ok()?).ok()?;
            let kind = std::fs::read(p.with_extension("json"))
                .ok()
                .and_then(|b| serde_json::from_slice::<Sidecar>(&b).ok())
                .and_then(|s| s.kind);
            let thumb = encode_image(&thumbnail(&img)).ok()?;
            Some(LightPreset { id, kind, width: img.width(), height: img.height(), thumbnail: crate::api::b64(&thumb) })
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}
