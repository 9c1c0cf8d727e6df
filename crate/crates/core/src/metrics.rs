//! Distortion metrics (PSNR, SSIM) and rate-curve comparison.
//!
//! [`psnr`] and [`ssim`] score a reconstruction against its source on the
//! unit pixel scale used throughout this crate. [`RateQualityCurve`] holds
//! one (bitrate, quality) point per encoder operating point, and [`bd_rate`]
//! compares two such curves: it fits quality → log₁₀(bitrate) for each,
//! integrates the gap over the overlapping quality range, and reports the
//! average bitrate change in percent. Negative means the test curve reaches
//! the same quality with less bitrate.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative luminance weights for red, green, blue (ITU-R BT.709 primaries).
pub(crate) const BT709_LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

/// Peak signal-to-noise ratio in decibels: `10·log10(peak² / MSE)`.
///
/// Returns `f64::INFINITY` when the inputs are identical (zero MSE).
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(a.shape().to_string(), b.shape().to_string()));
    }
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidConfig(format!("PSNR peak must be > 0, got {peak}")));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = (x - y) as f64;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Dynamic range of the unit pixel scale.
const SSIM_PEAK: f64 = 1.0;

/// Normalized 11-tap Gaussian used for the local window statistics.
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Extracts one luma plane per batch entry, in `f64`.
///
/// Single-channel input is used as-is; RGB is reduced with the BT.709
/// luminance weights. Other channel counts are rejected.
fn luma_planes(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let s = t.shape();
    let data = t.data();
    let mut planes = Vec::with_capacity(s.n);
    match s.c {
        1 => {
            for n in 0..s.n {
                let base = t.offset(n, 0, 0, 0);
                planes.push(data[base..base + s.h * s.w].iter().map(|&v| v as f64).collect());
            }
        }
        3 => {
            let [wr, wg, wb] = BT709_LUMA;
            for n in 0..s.n {
                let base = t.offset(n, 0, 0, 0);
                let mut plane = Vec::with_capacity(s.h * s.w);
                for px in 0..s.h * s.w {
                    let o = base + 3 * px;
                    plane.push(
                        wr * data[o] as f64 + wg * data[o + 1] as f64 + wb * data[o + 2] as f64,
                    );
                }
                planes.push(plane);
            }
        }
        c => {
            return Err(Error::InvalidShape(format!(
                "SSIM needs a luma plane (1 channel) or RGB (3), got {c} channels"
            )))
        }
    }
    Ok(planes)
}

/// Valid-mode separable filtering of an `h`×`w` plane with the same 1-D
/// window along both axes; the result is `(h−win+1)`×`(w−win+1)`.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        let dst = &mut rows[y * ow..(y + 1) * ow];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * src[x + k];
            }
            *d = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (k, &wk) in win.iter().enumerate() {
            let src = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}

/// Mean structural similarity over all 11×11 Gaussian-weighted windows
/// (σ = 1.5, K1 = 0.01, K2 = 0.03, unit dynamic range).
///
/// Inputs must share a shape and be at least 11×11; batches are averaged as
/// one pool of windows. RGB is reduced to BT.709 luma first.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(a.shape().to_string(), b.shape().to_string()));
    }
    let s = a.shape();
    for dim in [s.h, s.w] {
        if dim < SSIM_WINDOW {
            return Err(Error::WindowTooLarge { win: SSIM_WINDOW, dim });
        }
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_PEAK) * (SSIM_K1 * SSIM_PEAK);
    let c2 = (SSIM_K2 * SSIM_PEAK) * (SSIM_K2 * SSIM_PEAK);

    let pa = luma_planes(a)?;
    let pb = luma_planes(b)?;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
        let mu_x = filter_valid(x, s.h, s.w, &win);
        let mu_y = filter_valid(y, s.h, s.w, &win);
        let m_xx = filter_valid(&xx, s.h, s.w, &win);
        let m_yy = filter_valid(&yy, s.h, s.w, &win);
        let m_xy = filter_valid(&xy, s.h, s.w, &win);
        for i in 0..mu_x.len() {
            let (ux, uy) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - ux * ux;
            let var_y = m_yy[i] - uy * uy;
            let cov = m_xy[i] - ux * uy;
            let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
            let den = (ux * ux + uy * uy + c1) * (var_x + var_y + c2);
            acc += num / den;
        }
        count += mu_x.len();
    }
    Ok(acc / count as f64)
}

// ---------------------------------------------------------------------------
// Rate-quality curves
// ---------------------------------------------------------------------------

/// Which quality metric a curve's values are expressed in.
///
/// VMAF scores are accepted from external tooling via the CSV column; this
/// crate does not compute them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricTag {
    Psnr,
    Ssim,
    VmafExternal,
}

impl fmt::Display for MetricTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricTag::Psnr => "psnr",
            MetricTag::Ssim => "ssim",
            MetricTag::VmafExternal => "vmaf",
        })
    }
}

impl FromStr for MetricTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(MetricTag::Psnr),
            "ssim" => Ok(MetricTag::Ssim),
            "vmaf" | "vmaf-external" => Ok(MetricTag::VmafExternal),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

/// One encoder operating point on a rate-quality curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub bitrate_kbps: f64,
    pub quality: f64,
}

/// A rate-quality curve: one point per QP, sorted by bitrate.
///
/// Construction validates rather than repairs: at least four points (cubic
/// fitting needs four), strictly positive finite bitrates, and quality that
/// does not decrease as bitrate grows. Points may arrive in any order — the
/// constructor sorts by bitrate — but a quality dip after sorting is reported
/// as [`Error::NonMonotonicCurve`] with the offending indices, because it
/// signals a measurement problem the caller should look at.
#[derive(Debug, Clone, PartialEq)]
pub struct RateQualityCurve {
    metric: MetricTag,
    points: Vec<RatePoint>,
}

impl RateQualityCurve {
    pub fn new(metric: MetricTag, mut points: Vec<RatePoint>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::TooFewPoints {
                what: "rate-quality curve".into(),
                need: 4,
                got: points.len(),
            });
        }
        for p in &points {
            if !p.bitrate_kbps.is_finite() || p.bitrate_kbps <= 0.0 {
                return Err(Error::InvalidCurve(format!(
                    "bitrate must be finite and positive, got {}",
                    p.bitrate_kbps
                )));
            }
            if !p.quality.is_finite() {
                return Err(Error::InvalidCurve(format!("quality must be finite, got {}", p.quality)));
            }
        }
        points.sort_by(|a, b| a.bitrate_kbps.total_cmp(&b.bitrate_kbps));
        let dips: Vec<usize> = (1..points.len())
            .filter(|&i| points[i].quality < points[i - 1].quality)
            .collect();
        if !dips.is_empty() {
            return Err(Error::NonMonotonicCurve(dips));
        }
        Ok(RateQualityCurve { metric, points })
    }

    /// Builds a curve by pulling one metric column out of CSV rows.
    pub fn from_rows(rows: &[CurveRow], metric: MetricTag) -> Result<Self> {
        let mut points = Vec::with_capacity(rows.len());
        for row in rows {
            let quality = match metric {
                MetricTag::Psnr => row.psnr,
                MetricTag::Ssim => row.ssim,
                MetricTag::VmafExternal => {
                    row.vmaf.ok_or_else(|| Error::MissingMetric("vmaf".into()))?
                }
            };
            points.push(RatePoint { bitrate_kbps: row.bitrate_kbps, quality });
        }
        RateQualityCurve::new(metric, points)
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn points(&self) -> &[RatePoint] {
        &self.points
    }

    /// Lowest and highest quality on the curve.
    pub fn quality_range(&self) -> (f64, f64) {
        let first = self.points.first().expect("≥ 4 points").quality;
        let last = self.points.last().expect("≥ 4 points").quality;
        (first, last)
    }
}

/// One row of the curve CSV: a QP with its measured rate and quality values.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub qp: u32,
    pub bitrate_kbps: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Externally computed score; blank in the CSV when absent.
    pub vmaf: Option<f64>,
}

/// Writes rows as `qp,bitrate_kbps,psnr,ssim,vmaf` CSV (vmaf blank if absent).
pub fn write_curve_csv(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    let mut s = String::from("qp,bitrate_kbps,psnr,ssim,vmaf\n");
    for r in rows {
        let _ = write!(s, "{},{},{},{},", r.qp, r.bitrate_kbps, r.psnr, r.ssim);
        if let Some(v) = r.vmaf {
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads the CSV written by [`write_curve_csv`]. A leading header line is
/// skipped; the vmaf column may be blank or missing entirely.
pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurveRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if rows.is_empty() && fields[0].parse::<f64>().is_err() {
            continue; // header
        }
        let lineno = idx + 1;
        let parse_err = |msg: String| Error::CurveParse { line: lineno, msg };
        if fields.len() < 4 || fields.len() > 5 {
            return Err(parse_err(format!("expected 4 or 5 columns, got {}", fields.len())));
        }
        let f = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| parse_err(format!("bad {name} value {:?}", fields[i])))
        };
        let qp = fields[0]
            .parse::<u32>()
            .map_err(|_| parse_err(format!("bad qp value {:?}", fields[0])))?;
        let vmaf = match fields.get(4) {
            None => None,
            Some(&"") => None,
            Some(_) => Some(f(4, "vmaf")?),
        };
        rows.push(CurveRow {
            qp,
            bitrate_kbps: f(1, "bitrate")?,
            psnr: f(2, "psnr")?,
            ssim: f(3, "ssim")?,
            vmaf,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// BD-rate
// ---------------------------------------------------------------------------

/// How quality → log₁₀(bitrate) is fitted before integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdFit {
    /// Monotone piecewise-cubic Hermite interpolation (default). Passes
    /// through every point and cannot overshoot between them.
    Pchip,
    /// The classic single cubic polynomial, least-squares when more than
    /// four points are given. Kept for cross-checks against older tooling.
    Cubic,
}

impl fmt::Display for BdFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BdFit::Pchip => "pchip",
            BdFit::Cubic => "cubic",
        })
    }
}

impl FromStr for BdFit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pchip" => Ok(BdFit::Pchip),
            "cubic" => Ok(BdFit::Cubic),
            other => Err(Error::InvalidConfig(format!("unknown fit {other:?}"))),
        }
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
///
/// Interior knot slopes are the weighted harmonic mean of the neighboring
/// secants (zero at local extrema); endpoints use the three-point formula,
/// clamped so the fit stays monotone on its outer segments.
#[derive(Debug)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let e = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if sgn(e) != sgn(d0) {
        0.0
    } else if sgn(d0) != sgn(d1) && e.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        e
    }
}

impl MonotoneCubic {
    /// Fits knots with strictly increasing `x` (caller-checked).
    fn fit(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        debug_assert!(n >= 2 && x.windows(2).all(|w| w[1] > w[0]));
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m[0] = d[0];
            m[1] = d[0];
        } else {
            for i in 1..n - 1 {
                if d[i - 1] * d[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
                }
            }
            m[0] = edge_slope(h[0], h[1], d[0], d[1]);
            m[n - 1] = edge_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        }
        MonotoneCubic { x: x.to_vec(), y: y.to_vec(), m }
    }

    /// Cubic coefficients of segment `i` in `t = (x − x_i)/h`.
    fn segment_poly(&self, i: usize) -> [f64; 4] {
        let h = self.x[i + 1] - self.x[i];
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (hm0, hm1) = (h * self.m[i], h * self.m[i + 1]);
        [
            y0,
            hm0,
            -3.0 * y0 - 2.0 * hm0 + 3.0 * y1 - hm1,
            2.0 * y0 + hm0 - 2.0 * y1 + hm1,
        ]
    }

    /// Evaluates inside the knot range (clamped to the outer segments).
    #[cfg(test)]
    fn eval(&self, q: f64) -> f64 {
        let i = self.x.partition_point(|&xi| xi <= q).clamp(1, self.x.len() - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let t = (q - self.x[i]) / h;
        let [c0, c1, c2, c3] = self.segment_poly(i);
        ((c3 * t + c2) * t + c1) * t + c0
    }

    /// Exact integral over `[a, b]`, which must lie within the knot range.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b && a >= self.x[0] - 1e-9 && b <= *self.x.last().unwrap() + 1e-9);
        let mut total = 0.0;
        for i in 0..self.x.len() - 1 {
            let (x0, x1) = (self.x[i], self.x[i + 1]);
            let lo = a.max(x0);
            let hi = b.min(x1);
            if hi <= lo {
                continue;
            }
            let h = x1 - x0;
            let [c0, c1, c2, c3] = self.segment_poly(i);
            // ∫ p(t) dt = c0·t + c1·t²/2 + c2·t³/3 + c3·t⁴/4
            let anti = |t: f64| (((c3 / 4.0 * t + c2 / 3.0) * t + c1 / 2.0) * t + c0) * t;
            total += h * (anti((hi - x0) / h) - anti((lo - x0) / h));
        }
        total
    }
}

/// Classic cubic polynomial fit of quality → log₁₀(bitrate), least squares
/// beyond four points. Fitted in a centered/scaled variable for conditioning.
#[derive(Debug)]
struct FittedCubic {
    center: f64,
    scale: f64,
    coef: [f64; 4],
}

impl FittedCubic {
    fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len() as f64;
        let center = x.iter().sum::<f64>() / n;
        let scale = (x.iter().map(|&v| (v - center) * (v - center)).sum::<f64>() / n).sqrt();
        let u: Vec<f64> = x.iter().map(|&v| (v - center) / scale).collect();
        // Normal equations G·c = r with G[j][k] = Σ uᵢ^(j+k).
        let mut pow_sum = [0.0f64; 7];
        for &ui in &u {
            let mut p = 1.0;
            for s in &mut pow_sum {
                *s += p;
                p *= ui;
            }
        }
        let mut g = [[0.0f64; 5]; 4];
        for (j, row) in g.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().take(4).enumerate() {
                *cell = pow_sum[j + k];
            }
            row[4] = u.iter().zip(y).map(|(&ui, &yi)| ui.powi(j as i32) * yi).sum();
        }
        // Gaussian elimination with partial pivoting on the 4×5 system.
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))
                .expect("non-empty range");
            if g[pivot][col].abs() < 1e-12 {
                return Err(Error::InvalidCurve("degenerate cubic fit".into()));
            }
            g.swap(col, pivot);
            for r in 0..4 {
                if r != col {
                    let f = g[r][col] / g[col][col];
                    for c in col..5 {
                        g[r][c] -= f * g[col][c];
                    }
                }
            }
        }
        let mut coef = [0.0; 4];
        for (i, c) in coef.iter_mut().enumerate() {
            *c = g[i][4] / g[i][i];
        }
        Ok(FittedCubic { center, scale, coef })
    }

    fn integrate(&self, a: f64, b: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coef;
        let anti = |x: f64| {
            let u = (x - self.center) / self.scale;
            self.scale * ((((c3 / 4.0 * u + c2 / 3.0) * u + c1 / 2.0) * u + c0) * u)
        };
        anti(b) - anti(a)
    }
}

/// Pulls (quality, log₁₀ bitrate) out of a curve, requiring strictly
/// increasing quality so the rate function is single-valued.
fn quality_lograte(curve: &RateQualityCurve) -> Result<(Vec<f64>, Vec<f64>)> {
    let pts = curve.points();
    let ties: Vec<usize> =
        (1..pts.len()).filter(|&i| pts[i].quality <= pts[i - 1].quality).collect();
    if !ties.is_empty() {
        return Err(Error::NonMonotonicCurve(ties));
    }
    let x = pts.iter().map(|p| p.quality).collect();
    let y = pts.iter().map(|p| p.bitrate_kbps.log10()).collect();
    Ok((x, y))
}

/// Average bitrate difference of `test` against `reference` at equal quality,
/// in percent, using the given fit. Negative means `test` saves bitrate.
pub fn bd_rate_with(
    reference: &RateQualityCurve,
    test: &RateQualityCurve,
    fit: BdFit,
) -> Result<f64> {
    let (rx, ry) = quality_lograte(reference)?;
    let (tx, ty) = quality_lograte(test)?;
    let lo = rx[0].max(tx[0]);
    let hi = rx[rx.len() - 1].min(tx[tx.len() - 1]);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let gap = match fit {
        BdFit::Pchip => {
            MonotoneCubic::fit(&tx, &ty).integrate(lo, hi)
                - MonotoneCubic::fit(&rx, &ry).integrate(lo, hi)
        }
        BdFit::Cubic => {
            FittedCubic::fit(&tx, &ty)?.integrate(lo, hi)
                - FittedCubic::fit(&rx, &ry)?.integrate(lo, hi)
        }
    };
    let avg = gap / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

/// [`bd_rate_with`] using the default monotone piecewise-cubic fit.
pub fn bd_rate(reference: &RateQualityCurve, test: &RateQualityCurve) -> Result<f64> {
    bd_rate_with(reference, test, BdFit::Pchip)
}
