//! Loss-curve plots.

use std::path::Path;

use lightfx_core::imagecore::{save_image, Image};
use lightfx_core::training::LogRecord;

use crate::error::CliError;

const W: usize = 480;
const H: usize = 240;
const MARGIN: usize = 8;

fn read_log(path: &Path) -> Result<Vec<LogRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))))
        .collect()
}

struct Canvas {
    px: Vec<f32>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        if x < W && y < H {
            let i = (y * W + x) * 3;
            self.px[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), rgb: [f32; 3]) {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            self.put((a.0 + (b.0 - a.0) * t).round() as usize, (a.1 + (b.1 - a.1) * t).round() as usize, rgb);
        }
    }
}

/// Draws log10(loss) against iteration: raw in grey, a running mean in blue.
pub fn plot_losses(log: &Path, out: &Path) -> Result<(), CliError> {
    let recs = read_log(log)?;
    if recs.is_empty() {
        return Err(CliError::Runtime(format!("{} holds no records", log.display())));
    }
    let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.iteration as f64, r.loss.max(1e-12).log10())).collect();
    let window = (pts.len() / 50).max(1);
    let smooth: Vec<(f64, f64)> =
        pts.windows(window).map(|w| (w[w.len() - 1].0, w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64)).collect();
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let span = (hi - lo).max(1e-6);
    let x_max = pts.last().map_or(1.0, |p| p.0).max(1.0);
    let to_px = |p: &(f64, f64)| {
        (
            MARGIN as f64 + p.0 / x_max * (W - 2 * MARGIN - 1) as f64,
            MARGIN as f64 + (hi - p.1) / span * (H - 2 * MARGIN - 1) as f64,
        )
    };

    let mut c = Canvas { px: vec![1.0; W * H * 3] };
    let frame = [0.6; 3];
    let (l, r, t, b) = (MARGIN as f64 - 1.0, (W - MARGIN) as f64, MARGIN as f64 - 1.0, (H - MARGIN) as f64);
    for (a, z) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
        c.line(a, z, frame);
    }
    for (series, rgb) in [(&pts, [0.78, 0.78, 0.78]), (&smooth, [0.1, 0.25, 0.85])] {
        for w in series.windows(2) {
            c.line(to_px(&w[0]), to_px(&w[1]), rgb);
        }
    }
    save_image(out, &Image::new(H, W, c.px)?)?;
    Ok(())
}
