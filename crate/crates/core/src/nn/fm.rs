//! Batched feature maps laid out channel-major: `[C][N][H][W]`.
//!
//! With this layout a convolution is one GEMM over `N*H*W` columns and
//! channel concatenation is buffer concatenation.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Fm<S> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Fm<S> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![S::zero(); c * n * h * w] }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "feature map size");
        Self { c, n, h, w, data }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Columns of the `C x (N*H*W)` matrix view.
    #[inline]
    pub fn cols(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn same_shape(&self, other: &Fm<S>) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }

    /// Channel slice `[c0, c0 + len)`.
    pub fn channels(&self, c0: usize, len: usize) -> Fm<S> {
        let stride = self.cols();
        Fm::from_vec(len, self.n, self.h, self.w, self.data[c0 * stride..(c0 + len) * stride].to_vec())
    }

    /// Sample `i` as a standalone `C x H x W` map with `n = 1`.
    pub fn sample(&self, i: usize) -> Fm<S> {
        let p = self.plane();
        let mut data = Vec::with_capacity(self.c * p);
        for ch in 0..self.c {
            let o = (ch * self.n + i) * p;
            data.extend_from_slice(&self.data[o..o + p]);
        }
        Fm::from_vec(self.c, 1, self.h, self.w, data)
    }

    /// Stacks single-sample maps along the batch axis.
    pub fn stack(samples: &[Fm<S>]) -> Fm<S> {
        let first = &samples[0];
        let (c, h, w) = (first.c, first.h, first.w);
        let n: usize = samples.iter().map(|s| s.n).sum();
        let mut data = Vec::with_capacity(c * n * h * w);
        for ch in 0..c {
            for s in samples {
                assert_eq!((s.c, s.h, s.w), (c, h, w), "stack shape");
                let len = s.n * h * w;
                data.extend_from_slice(&s.data[ch * len..(ch + 1) * len]);
            }
        }
        Fm::from_vec(c, n, h, w, data)
    }

    pub fn add_assign(&mut self, other: &Fm<S>) {
        assert!(self.same_shape(other), "add shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scaled(&self, k: S) -> Fm<S> {
        Fm { data: self.data.iter().map(|v| *v * k).collect(), ..*self }
    }
}

pub fn concat_channels<S: Scalar>(parts: &[&Fm<S>]) -> Fm<S> {
    let first = parts[0];
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
    let mut c = 0;
    for p in parts {
        assert_eq!((p.n, p.h, p.w), (first.n, first.h, first.w), "concat shape");
        data.extend_from_slice(&p.data);
        c += p.c;
    }
    Fm::from_vec(c, first.n, first.h, first.w, data)
}

/// Zero-padded 3x3 patches: `(C*9) x (N*H*W)`.
pub fn im2col3<S: Scalar>(x: &Fm<S>) -> Vec<S> {
    let (c, n, h, w) = (x.c, x.n, x.h, x.w);
    let cols = n * h * w;
    let mut out = vec![S::zero(); c * 9 * cols];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * cols;
                for s in 0..n {
                    let src = (ch * n + s) * h * w;
                    let dst = row + s * h * w;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        let o = dst + y * w;
                        let i = src + sy * w;
                        for xx in x0..x1 {
                            out[o + xx] = x.data[i + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col3`].
pub fn col2im3<S: Scalar>(cols_buf: &[S], c: usize, n: usize, h: usize, w: usize) -> Fm<S> {
    let cols = n * h * w;
    let mut out = Fm::zeros(c, n, h, w);
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * 9 + ky * 3 + kx) * cols;
                for s in 0..n {
                    let dst = (ch * n + s) * h * w;
                    let src = row + s * h * w;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        let i = src + y * w;
                        let o = dst + sy * w;
                        for xx in x0..x1 {
                            out.data[o + xx + kx - 1] += cols_buf[i + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn silu<S: Scalar>(x: &Fm<S>) -> Fm<S> {
    Fm { data: x.data.iter().map(|&v| v * sigmoid(v)).collect(), ..*x }
}

/// Gradient of SiLU given its pre-activation input.
pub fn silu_backward<S: Scalar>(pre: &Fm<S>, dy: &Fm<S>) -> Fm<S> {
    let data = pre
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * s * (S::one() + x * (S::one() - s))
        })
        .collect();
    Fm { data, ..*pre }
}

pub fn avg_pool2<S: Scalar>(x: &Fm<S>) -> Fm<S> {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Fm::zeros(x.c, x.n, oh, ow);
    let q = S::lit(0.25);
    for p in 0..x.c * x.n {
        let src = &x.data[p * x.h * x.w..(p + 1) * x.h * x.w];
        let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * ow + xx] = q * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(dy: &Fm<S>, h: usize, w: usize) -> Fm<S> {
    let mut out = Fm::zeros(dy.c, dy.n, h, w);
    let q = S::lit(0.25);
    for p in 0..dy.c * dy.n {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                let g = q * dy.data[p * dy.h * dy.w + y * dy.w + xx];
                let i = p * h * w + 2 * y * w + 2 * xx;
                out.data[i] = g;
                out.data[i + 1] = g;
                out.data[i + w] = g;
                out.data[i + w + 1] = g;
            }
        }
    }
    out
}

pub fn upsample2<S: Scalar>(x: &Fm<S>) -> Fm<S> {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Fm::zeros(x.c, x.n, oh, ow);
    for p in 0..x.c * x.n {
        for y in 0..oh {
            for xx in 0..ow {
                out.data[p * oh * ow + y * ow + xx] = x.data[p * x.h * x.w + (y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(dy: &Fm<S>) -> Fm<S> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut out = Fm::zeros(dy.c, dy.n, h, w);
    for p in 0..dy.c * dy.n {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                out.data[p * h * w + (y / 2) * w + xx / 2] += dy.data[p * dy.h * dy.w + y * dy.w + xx];
            }
        }
    }
    out
}

/// Adds a per-(channel, sample) bias `C x N` over every pixel.
pub fn add_sample_bias<S: Scalar>(x: &mut Fm<S>, bias: &[S]) {
    assert_eq!(bias.len(), x.c * x.n, "bias shape");
    let p = x.plane();
    for (i, b) in bias.iter().enumerate() {
        for v in &mut x.data[i * p..(i + 1) * p] {
            *v += *b;
        }
    }
}

/// Adjoint of [`add_sample_bias`]: sums each plane.
pub fn sum_planes<S: Scalar>(dy: &Fm<S>) -> Vec<S> {
    let p = dy.plane();
    dy.data.chunks_exact(p).map(|c| c.iter().copied().sum()).collect()
}
