//! 16-bit PNG serialization: `v -> round(v * 65535)`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::raster::{Image, LightImage, Mask, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png { path: path.to_path_buf(), message: e.to_string() }
}

pub fn encode_image<S: Scalar>(img: &Image<S>) -> Result<Vec<u8>> {
    let (h, w) = img.dims();
    let mut bytes = Vec::with_capacity(img.data().len() * 2);
    for &v in img.data() {
        let q = (v.as_f64() * 65535.0).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| png_err(Path::new("<memory>"), e))?;
        writer.write_image_data(&bytes).map_err(|e| png_err(Path::new("<memory>"), e))?;
    }
    Ok(out)
}

/// Decodes 8- or 16-bit gray/RGB/RGBA PNG into an RGB image (alpha dropped).
pub fn decode_image<S: Scalar>(bytes: &[u8]) -> Result<Image<S>> {
    let memory = Path::new("<memory>");
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| png_err(memory, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(memory, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err(memory, "indexed PNG not supported")),
    };
    let sample = |i: usize| -> f64 {
        match info.bit_depth {
            png::BitDepth::Sixteen => u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0,
            png::BitDepth::Eight => buf[i] as f64 / 255.0,
            _ => f64::NAN,
        }
    };
    if !matches!(info.bit_depth, png::BitDepth::Eight | png::BitDepth::Sixteen) {
        return Err(png_err(memory, "only 8- and 16-bit PNG supported"));
    }
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for p in 0..w * h {
        for ch in 0..CHANNELS {
            let src = if src_channels < 3 { 0 } else { ch };
            data.push(S::lit(sample(p * src_channels + src)));
        }
    }
    Image::new(h, w, data)
}

pub fn encode_mask(mask: &Mask) -> Result<Vec<u8>> {
    let (h, w) = mask.dims();
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| png_err(Path::new("<memory>"), e))?;
        writer.write_image_data(&bytes).map_err(|e| png_err(Path::new("<memory>"), e))?;
    }
    Ok(out)
}

/// Any pixel with luma above one half counts as foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let img: Image<f64> = decode_image(bytes)?;
    let (h, w) = img.dims();
    let data = img.luminance().into_iter().map(|v| (v > 0.5) as u8).collect();
    Mask::new(h, w, data)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    std::io::Write::write_all(&mut w, bytes).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn relabel<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Png { message, .. } => Error::Png { path: path.to_path_buf(), message },
        other => other,
    })
}

pub fn save_image<S: Scalar>(path: &Path, img: &Image<S>) -> Result<()> {
    write_bytes(path, &encode_image(img)?)
}

pub fn load_image<S: Scalar>(path: &Path) -> Result<Image<S>> {
    relabel(path, decode_image(&read_bytes(path)?))
}

pub fn save_light<S: Scalar>(path: &Path, light: &LightImage<S>) -> Result<()> {
    save_image(path, light.as_image())
}

pub fn load_light<S: Scalar>(path: &Path) -> Result<LightImage<S>> {
    load_image(path).map(LightImage::from_image)
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_bytes(path, &encode_mask(mask)?)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    relabel(path, decode_mask(&read_bytes(path)?))
}
