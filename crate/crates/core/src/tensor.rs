//! Minimal NHWC tensor and rational scale factors.
//!
//! Image batches are stored as `f32` in NHWC order (batch, height, width,
//! channel), flat in one `Vec`. The channel axis is innermost so per-pixel
//! channel slices are contiguous — the convolution and resize kernels lean
//! on that for vectorization.
//!
//! Reductions that feed decisions (loss values, dot products) accumulate in
//! `f64` over the flat index in order, so results are identical from run to
//! run regardless of how callers produced the tensor.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Dimensions of an NHWC tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    /// Total number of elements.
    pub fn volume(&self) -> usize {
        self.n * self.h * self.w * self.c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.h, self.w, self.c)
    }
}

/// Dense `f32` tensor in NHWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// All-zero tensor.
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.volume()] }
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.volume()] }
    }

    /// Wraps an existing buffer. The length must match the shape volume and
    /// every element must be finite; tensors entering the crate are checked
    /// once here so the numeric kernels can skip per-element tests.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.volume() {
            return Err(Error::InvalidLength { got: data.len(), want: shape.volume() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Flat offset of `(n, y, x, c)`.
    #[inline(always)]
    pub fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.shape.h + y) * self.shape.w + x) * self.shape.c + c
    }

    #[inline(always)]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(n, y, x, c)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: f32) {
        let i = self.offset(n, y, x, c);
        self.data[i] = v;
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape.to_string(), other.shape.to_string()));
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    /// In-place `self += scale * other` (shapes must already match).
    pub fn add_scaled(&mut self, other: &Tensor, scale: f32) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Scalar multiple.
    pub fn scaled(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    /// Inner product, accumulated in `f64` over the flat index in order.
    /// The fixed order makes the value reproducible bit for bit.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += *a as f64 * *b as f64;
        }
        Ok(acc)
    }

    /// Extracts one image of the batch as an `n = 1` tensor.
    pub fn image(&self, n: usize) -> Tensor {
        let per = self.shape.h * self.shape.w * self.shape.c;
        let start = n * per;
        Tensor {
            shape: Shape::new(1, self.shape.h, self.shape.w, self.shape.c),
            data: self.data[start..start + per].to_vec(),
        }
    }
}

/// Rational resize factor `p/q` in lowest terms.
///
/// The factor expresses how much *larger* the source is than the target when
/// downscaling: a source of height `H` (divisible by `p`) downsizes to
/// `H * q / p`. For example `3/2` maps 12 → 8 and `5/2` maps 10 → 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RationalScale {
    p: u32,
    q: u32,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl RationalScale {
    /// Builds `p/q` reduced to lowest terms. Both parts must be nonzero.
    pub fn new(p: u32, q: u32) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::InvalidScale(format!("{p}/{q}")));
        }
        let g = gcd(p, q);
        Ok(RationalScale { p: p / g, q: q / g })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    /// The factor as a float (`p/q`).
    pub fn factor(&self) -> f64 {
        self.p as f64 / self.q as f64
    }

    pub fn is_identity(&self) -> bool {
        self.p == self.q
    }

    pub fn is_downscale(&self) -> bool {
        self.p > self.q
    }

    /// `Some(p)` when the factor is a whole number (q reduces to 1); strided
    /// and pooling blocks can only realize these.
    pub fn integer_factor(&self) -> Option<u32> {
        (self.q == 1).then_some(self.p)
    }

    /// Target length when downscaling a source of length `len`.
    /// `len * q` must be divisible by `p` so the result is exact.
    pub fn down_len(&self, len: usize) -> Result<usize> {
        let num = len * self.q as usize;
        if num % self.p as usize != 0 {
            return Err(Error::IndivisibleSize { dim: len, p: self.p, q: self.q });
        }
        Ok(num / self.p as usize)
    }

    /// Target length when upscaling a source of length `len` by `p/q`,
    /// rounded to the nearest integer when inexact.
    pub fn up_len(&self, len: usize) -> usize {
        (len * self.p as usize + self.q as usize / 2) / self.q as usize
    }
}

impl fmt::Display for RationalScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.p, self.q)
    }
}

impl FromStr for RationalScale {
    type Err = Error;

    /// Accepts `"p/q"`, a bare integer (`"2"`), or a decimal (`"2.5"`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let invalid = || Error::InvalidScale(s.to_string());
        if let Some((num, den)) = s.split_once('/') {
            let p: u32 = num.trim().parse().map_err(|_| invalid())?;
            let q: u32 = den.trim().parse().map_err(|_| invalid())?;
            return RationalScale::new(p, q);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
                return Err(invalid());
            }
            let int: u32 = if int.is_empty() { 0 } else { int.parse().map_err(|_| invalid())? };
            let fr: u32 = frac.parse().map_err(|_| invalid())?;
            let den = 10u32.checked_pow(frac.len() as u32).ok_or_else(invalid)?;
            let num = int.checked_mul(den).and_then(|v| v.checked_add(fr)).ok_or_else(invalid)?;
            return RationalScale::new(num, den);
        }
        let p: u32 = s.parse().map_err(|_| invalid())?;
        RationalScale::new(p, 1)
    }
}
