use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest side accepted for any raster.
pub const MIN_SIDE: usize = 8;
pub const CHANNELS: usize = 3;

/// RGB raster, row-major, interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<S> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    /// Validates size, length and value range.
    pub fn new(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::invalid(format!(
                "image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::dims(format!(
                "expected {} values for {height}x{width}x{CHANNELS}, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < S::zero() || **v > S::one()) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds from arbitrary values, clamping into `[0, 1]` and mapping NaN to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<S>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: S) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, S::zero())
    }

    /// `f(row, col, channel)`, clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> S) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..CHANNELS {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> S {
        self.data[(row * self.width + col) * CHANNELS + ch]
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [S; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &Image<S>) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_dims(&self, other: &Image<S>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Rec.601 luma per pixel.
    pub fn luminance(&self) -> Vec<S> {
        let (wr, wg, wb) = (S::lit(0.299), S::lit(0.587), S::lit(0.114));
        self.data.chunks_exact(CHANNELS).map(|p| wr * p[0] + wg * p[1] + wb * p[2]).collect()
    }

    /// Per-pixel maximum over channels.
    pub fn max_channel(&self) -> Vec<S> {
        self.data.chunks_exact(CHANNELS).map(|p| p[0].max(p[1]).max(p[2])).collect()
    }

    pub fn mean(&self) -> S {
        self.data.iter().copied().sum::<S>() / S::from_usize(self.data.len()).unwrap()
    }

    /// Elementwise map followed by clamping.
    pub fn map(&self, f: impl Fn(S) -> S) -> Image<S> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| clamp01(f(v))).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }

    /// Values are valid by construction; used by transforms that preserve range.
    pub(crate) fn from_parts_unchecked(height: usize, width: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Self { height, width, data }
    }
}

/// Additive light over a black background; 0 means no light.
#[derive(Clone, Debug, PartialEq)]
pub struct LightImage<S>(Image<S>);

impl<S: Scalar> LightImage<S> {
    pub fn new(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        Image::new(height, width, data).map(Self)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Image::zeros(height, width).map(Self)
    }

    pub fn from_image(image: Image<S>) -> Self {
        Self(image)
    }

    pub fn as_image(&self) -> &Image<S> {
        &self.0
    }

    pub fn into_image(self) -> Image<S> {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn data(&self) -> &[S] {
        self.0.data()
    }

    pub fn is_black(&self) -> bool {
        self.0.data().iter().all(|v| *v == S::zero())
    }

    pub fn cast<T: Scalar>(&self) -> LightImage<T> {
        LightImage(self.0.cast())
    }
}

/// Binary foreground mask; 1 marks object pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dims(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, data: vec![value as u8; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn invert(&self) -> Mask {
        Mask { height: self.height, width: self.width, data: self.data.iter().map(|v| 1 - v).collect() }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

#[inline]
pub fn clamp01<S: Scalar>(v: S) -> S {
    if v.is_nan() {
        S::zero()
    } else {
        v.max(S::zero()).min(S::one())
    }
}
