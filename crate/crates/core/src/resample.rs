//! Separable resamplers at rational scale factors.
//!
//! A resize is realized as one explicit sparse row operator per axis
//! ([`ResampleMatrix`]), applied along height then width. Building the
//! operator once and applying it everywhere has two payoffs:
//!
//! - the backward pass is the exact transpose of the same matrix, so the
//!   adjoint identity `⟨Rx, y⟩ = ⟨x, Rᵀy⟩` holds by construction, and
//! - rows are normalized to sum to 1, so constant images stay constant.
//!
//! Coordinates use the half-pixel convention: destination index `j` samples
//! source coordinate `(j + 0.5)·(src/dst) − 0.5`. When downscaling with
//! antialiasing on (the default), the kernel support widens by the scale
//! ratio so every source pixel contributes. Taps that fall outside the
//! image clamp to the border pixel.

use crate::error::{Error, Result};
use crate::tensor::{RationalScale, Shape, Tensor};

/// Kernel family used to weight source taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterTag {
    /// Triangle kernel, support 1. The only filter the training graph
    /// differentiates through, but all three have exact adjoints.
    Bilinear,
    /// Keys cubic with a = −0.5, support 2.
    Bicubic,
    /// Sinc windowed by a radius-3 sinc, support 3.
    Lanczos3,
}

/// A kernel choice plus the antialias switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterKind {
    pub tag: FilterTag,
    /// Widen the kernel by the scale ratio when downscaling (on by default).
    /// Without it, bilinear at factor ≥ 2 skips source pixels entirely.
    pub antialias: bool,
}

impl std::fmt::Display for FilterTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterTag::Bilinear => "bilinear",
            FilterTag::Bicubic => "bicubic",
            FilterTag::Lanczos3 => "lanczos3",
        })
    }
}

impl std::str::FromStr for FilterTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(FilterTag::Bilinear),
            "bicubic" => Ok(FilterTag::Bicubic),
            "lanczos" | "lanczos3" => Ok(FilterTag::Lanczos3),
            other => Err(Error::InvalidConfig(format!("unknown filter {other:?}"))),
        }
    }
}

impl FilterKind {
    pub fn new(tag: FilterTag) -> Self {
        FilterKind { tag, antialias: true }
    }

    pub fn bilinear() -> Self {
        FilterKind { tag: FilterTag::Bilinear, antialias: true }
    }

    pub fn bicubic() -> Self {
        FilterKind { tag: FilterTag::Bicubic, antialias: true }
    }

    pub fn lanczos3() -> Self {
        FilterKind { tag: FilterTag::Lanczos3, antialias: true }
    }

    pub fn without_antialias(mut self) -> Self {
        self.antialias = false;
        self
    }

    /// Kernel support radius at scale 1.
    pub fn support(&self) -> f64 {
        match self.tag {
            FilterTag::Bilinear => 1.0,
            FilterTag::Bicubic => 2.0,
            FilterTag::Lanczos3 => 3.0,
        }
    }

    /// Kernel value at (scaled) offset `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        match self.tag {
            FilterTag::Bilinear => {
                if t < 1.0 {
                    1.0 - t
                } else {
                    0.0
                }
            }
            FilterTag::Bicubic => {
                const A: f64 = -0.5;
                if t < 1.0 {
                    ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
                } else if t < 2.0 {
                    A * (((t - 5.0) * t + 8.0) * t - 4.0)
                } else {
                    0.0
                }
            }
            FilterTag::Lanczos3 => {
                const R: f64 = 3.0;
                if t < 1e-12 {
                    1.0
                } else if t < R {
                    let a = std::f64::consts::PI * t;
                    let b = a / R;
                    (a.sin() / a) * (b.sin() / b)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weights for one destination index: a contiguous run of source taps
/// beginning at `start`.
#[derive(Debug, Clone)]
pub struct ResampleRow {
    pub start: usize,
    pub weights: Vec<f32>,
}

/// Sparse row-stochastic operator mapping `src_len` samples to `dst_len`.
#[derive(Debug, Clone)]
pub struct ResampleMatrix {
    pub src_len: usize,
    pub dst_len: usize,
    pub rows: Vec<ResampleRow>,
}

impl ResampleMatrix {
    /// `(source index, weight)` pairs for destination index `dst`.
    pub fn pairs(&self, dst: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let row = &self.rows[dst];
        row.weights.iter().enumerate().map(move |(k, &w)| (row.start + k, w))
    }
}

// Weights smaller than this (pre-normalization) are treated as zero when
// trimming row support; real kernel taps are orders of magnitude larger.
const TRIM_EPS: f64 = 1e-10;

/// Assembles the sparse operator for one axis.
///
/// Each row is built by evaluating the kernel at half-pixel-mapped offsets,
/// accumulating out-of-range taps onto the border pixel, trimming zero
/// weights at the ends, and normalizing the row to sum to 1.
pub fn build_resample_matrix(
    filter: FilterKind,
    src_len: usize,
    dst_len: usize,
) -> Result<ResampleMatrix> {
    if src_len == 0 || dst_len == 0 {
        return Err(Error::InvalidResampleLength { src: src_len, dst: dst_len });
    }
    let ratio = src_len as f64 / dst_len as f64;
    let fscale = if filter.antialias && src_len > dst_len { ratio } else { 1.0 };
    let radius = filter.support() * fscale;
    let max = src_len - 1;

    let mut rows = Vec::with_capacity(dst_len);
    for j in 0..dst_len {
        let center = (j as f64 + 0.5) * ratio - 0.5;
        let lo = (center - radius).floor() as i64;
        let hi = (center + radius).ceil() as i64;
        let first = (lo.clamp(0, max as i64)) as usize;
        let last = (hi.clamp(0, max as i64)) as usize;
        let mut acc = vec![0.0f64; last - first + 1];
        for i in lo..=hi {
            let w = filter.eval((i as f64 - center) / fscale);
            if w.abs() > TRIM_EPS {
                let ci = i.clamp(0, max as i64) as usize;
                acc[ci - first] += w;
            }
        }
        // Trim zero tails so identity rows are a single unit tap.
        let lead = acc.iter().position(|w| w.abs() > TRIM_EPS).unwrap_or(0);
        let trail = acc.iter().rposition(|w| w.abs() > TRIM_EPS).unwrap_or(acc.len() - 1);
        let kept = &acc[lead..=trail];
        let sum: f64 = kept.iter().sum();
        debug_assert!(sum > 0.0, "kernel row summed to {sum}");
        let weights = kept.iter().map(|w| (w / sum) as f32).collect();
        rows.push(ResampleRow { start: first + lead, weights });
    }
    Ok(ResampleMatrix { src_len, dst_len, rows })
}

/// `out[oy] = Σ_k w_k · x[start+k]` over rows of each image.
fn apply_along_h(x: &Tensor, m: &ResampleMatrix) -> Tensor {
    let s = x.shape();
    debug_assert_eq!(s.h, m.src_len);
    let mut out = Tensor::zeros(Shape::new(s.n, m.dst_len, s.w, s.c));
    let row_elems = s.w * s.c;
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n {
        let x_base = n * s.h * row_elems;
        let o_base = n * m.dst_len * row_elems;
        for (oy, row) in m.rows.iter().enumerate() {
            let dst = &mut od[o_base + oy * row_elems..o_base + (oy + 1) * row_elems];
            for (k, &w) in row.weights.iter().enumerate() {
                let sy = row.start + k;
                let src = &xd[x_base + sy * row_elems..x_base + (sy + 1) * row_elems];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`apply_along_h`]: scatters each output row back onto the taps
/// that produced it.
fn adjoint_along_h(g: &Tensor, m: &ResampleMatrix) -> Tensor {
    let s = g.shape();
    debug_assert_eq!(s.h, m.dst_len);
    let mut out = Tensor::zeros(Shape::new(s.n, m.src_len, s.w, s.c));
    let row_elems = s.w * s.c;
    let gd = g.data();
    let od = out.data_mut();
    for n in 0..s.n {
        let g_base = n * m.dst_len * row_elems;
        let o_base = n * m.src_len * row_elems;
        for (oy, row) in m.rows.iter().enumerate() {
            let src = &gd[g_base + oy * row_elems..g_base + (oy + 1) * row_elems];
            for (k, &w) in row.weights.iter().enumerate() {
                let sy = row.start + k;
                let dst = &mut od[o_base + sy * row_elems..o_base + (sy + 1) * row_elems];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

/// `out[ox] = Σ_k w_k · x[start+k]` over columns, per pixel row.
fn apply_along_w(x: &Tensor, m: &ResampleMatrix) -> Tensor {
    let s = x.shape();
    debug_assert_eq!(s.w, m.src_len);
    let mut out = Tensor::zeros(Shape::new(s.n, s.h, m.dst_len, s.c));
    let c = s.c;
    let xd = x.data();
    let od = out.data_mut();
    for r in 0..s.n * s.h {
        let in_row = &xd[r * s.w * c..(r + 1) * s.w * c];
        let out_row = &mut od[r * m.dst_len * c..(r + 1) * m.dst_len * c];
        for (ox, row) in m.rows.iter().enumerate() {
            let dst = &mut out_row[ox * c..(ox + 1) * c];
            for (k, &w) in row.weights.iter().enumerate() {
                let sx = row.start + k;
                let src = &in_row[sx * c..(sx + 1) * c];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`apply_along_w`].
fn adjoint_along_w(g: &Tensor, m: &ResampleMatrix) -> Tensor {
    let s = g.shape();
    debug_assert_eq!(s.w, m.dst_len);
    let mut out = Tensor::zeros(Shape::new(s.n, s.h, m.src_len, s.c));
    let c = s.c;
    let gd = g.data();
    let od = out.data_mut();
    for r in 0..s.n * s.h {
        let g_row = &gd[r * m.dst_len * c..(r + 1) * m.dst_len * c];
        let out_row = &mut od[r * m.src_len * c..(r + 1) * m.src_len * c];
        for (ox, row) in m.rows.iter().enumerate() {
            let src = &g_row[ox * c..(ox + 1) * c];
            for (k, &w) in row.weights.iter().enumerate() {
                let sx = row.start + k;
                let dst = &mut out_row[sx * c..(sx + 1) * c];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

/// Resizes an NHWC batch to `(out_h, out_w)`, height axis first.
pub fn resize_forward(x: &Tensor, filter: FilterKind, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = x.shape();
    let mh = build_resample_matrix(filter, s.h, out_h)?;
    let mw = build_resample_matrix(filter, s.w, out_w)?;
    Ok(apply_along_w(&apply_along_h(x, &mh), &mw))
}

/// Transpose of [`resize_forward`]: maps a gradient at the output size back
/// to a gradient at the input size `(in_h, in_w)` through the same weights.
pub fn resize_backward(
    grad_out: &Tensor,
    filter: FilterKind,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    let s = grad_out.shape();
    let mh = build_resample_matrix(filter, in_h, s.h)?;
    let mw = build_resample_matrix(filter, in_w, s.w)?;
    Ok(adjoint_along_h(&adjoint_along_w(grad_out, &mw), &mh))
}

/// Whether a scaled resize shrinks or enlarges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Down => "down",
            Direction::Up => "up",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(Direction::Down),
            "up" => Ok(Direction::Up),
            other => Err(Error::InvalidConfig(format!("unknown direction {other:?}"))),
        }
    }
}

/// Resizes by a rational factor.
///
/// Down requires both spatial dims divisible so the output size is exact
/// (crop first if not — see `train::crop_size`). Up computes `len·p/q`,
/// rounding to nearest when the source was not produced by an exact down.
pub fn resize_by_scale(
    x: &Tensor,
    filter: FilterKind,
    scale: RationalScale,
    direction: Direction,
) -> Result<Tensor> {
    let s = x.shape();
    let (out_h, out_w) = match direction {
        Direction::Down => (scale.down_len(s.h)?, scale.down_len(s.w)?),
        Direction::Up => (scale.up_len(s.h), scale.up_len(s.w)),
    };
    resize_forward(x, filter, out_h, out_w)
}
