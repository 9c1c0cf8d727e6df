//! Shared oracles for the integration suites: straight-line f64
//! implementations written independently of the library's layouts and loop
//! orders, so agreement is evidence rather than tautology.
#![allow(dead_code)]

use convresize::nn::{BlockKind, ConvLayer, Network};
use convresize::resample::{build_resample_matrix, FilterKind};
use convresize::tensor::{RationalScale, Shape, Tensor};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded generator for test data.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor(shape: Shape, lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    let data = (0..shape.volume()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// `Σ a·b` accumulated in f64.
pub fn dot_f64(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Dense `dst_len × src_len` matrix of a 1-D resample operator, in f64.
pub fn dense_axis_matrix(filter: FilterKind, src_len: usize, dst_len: usize) -> Vec<Vec<f64>> {
    let m = build_resample_matrix(filter, src_len, dst_len).unwrap();
    let mut dense = vec![vec![0.0; src_len]; dst_len];
    for j in 0..dst_len {
        for (i, w) in m.pairs(j) {
            dense[j][i] += w as f64;
        }
    }
    dense
}

/// Full separable resize applied as two explicit dense matrix products in
/// f64 (height first, then width), independent of the library's sparse
/// row-run application.
pub fn dense_resize_f64(x: &Tensor, filter: FilterKind, out_h: usize, out_w: usize) -> Vec<f64> {
    let s = x.shape();
    let mh = dense_axis_matrix(filter, s.h, out_h);
    let mw = dense_axis_matrix(filter, s.w, out_w);
    let xd: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    // height pass: (n, out_h, w, c)
    let mut mid = vec![0.0; s.n * out_h * s.w * s.c];
    for n in 0..s.n {
        for oy in 0..out_h {
            for iy in 0..s.h {
                let w = mh[oy][iy];
                if w == 0.0 {
                    continue;
                }
                for xcol in 0..s.w {
                    for c in 0..s.c {
                        mid[((n * out_h + oy) * s.w + xcol) * s.c + c] +=
                            w * xd[((n * s.h + iy) * s.w + xcol) * s.c + c];
                    }
                }
            }
        }
    }
    // width pass: (n, out_h, out_w, c)
    let mut out = vec![0.0; s.n * out_h * out_w * s.c];
    for n in 0..s.n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                for ix in 0..s.w {
                    let w = mw[ox][ix];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..s.c {
                        out[((n * out_h + oy) * out_w + ox) * s.c + c] +=
                            w * mid[((n * out_h + oy) * s.w + ix) * s.c + c];
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation with 'same' zero padding in plain f64 loops over a flat
/// single-image plane: for each output pixel, walk the kernel window and sum
/// `x[iy][ix][ic] · w[ky][kx][ic][oc]` plus bias. Follows the documented
/// contract, not the library's loop nest. Returns the plane and its dims.
pub fn conv_plane_f64(
    x: &[f64],
    h: usize,
    w: usize,
    layer: &ConvLayer,
) -> (Vec<f64>, usize, usize) {
    assert_eq!(x.len(), h * w * layer.in_ch);
    let (out_h, out_w) = layer.out_dims(h, w);
    let (pad_y, pad_x) = ((layer.kh - 1) / 2, (layer.kw - 1) / 2);
    let mut out = vec![0.0f64; out_h * out_w * layer.out_ch];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for oc in 0..layer.out_ch {
                let mut acc = layer.bias[oc] as f64;
                for ky in 0..layer.kh {
                    for kx in 0..layer.kw {
                        let iy = (oy * layer.stride + ky) as i64 - pad_y as i64;
                        let ix = (ox * layer.stride + kx) as i64 - pad_x as i64;
                        if iy < 0 || iy >= h as i64 || ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        for ic in 0..layer.in_ch {
                            let xv = x[((iy as usize) * w + ix as usize) * layer.in_ch + ic];
                            let wv = layer.weights[layer.w_index(ky, kx, ic, oc)];
                            acc += xv * wv as f64;
                        }
                    }
                }
                out[(oy * out_w + ox) * layer.out_ch + oc] = acc;
            }
        }
    }
    (out, out_h, out_w)
}

/// [`conv_plane_f64`] applied per image of an NHWC tensor.
pub fn naive_conv_f64(x: &Tensor, layer: &ConvLayer) -> Vec<f64> {
    let s = x.shape();
    let plane = s.h * s.w * s.c;
    let mut out = Vec::new();
    for n in 0..s.n {
        let xd: Vec<f64> =
            x.data()[n * plane..(n + 1) * plane].iter().map(|&v| v as f64).collect();
        out.extend(conv_plane_f64(&xd, s.h, s.w, layer).0);
    }
    out
}

/// Separable resize of a flat f64 plane through dense per-axis matrices.
pub fn resize_plane_f64(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    filter: FilterKind,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mh = dense_axis_matrix(filter, h, oh);
    let mw = dense_axis_matrix(filter, w, ow);
    let mut mid = vec![0.0; oh * w * c];
    for oy in 0..oh {
        for iy in 0..h {
            let wt = mh[oy][iy];
            if wt == 0.0 {
                continue;
            }
            for i in 0..w * c {
                mid[oy * w * c + i] += wt * x[iy * w * c + i];
            }
        }
    }
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ix in 0..w {
                let wt = mw[ox][ix];
                if wt == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    out[(oy * ow + ox) * c + ch] += wt * mid[(oy * w + ix) * c + ch];
                }
            }
        }
    }
    out
}

fn relu_f64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn avg_pool_f64(x: &[f64], h: usize, w: usize, c: usize, m: usize) -> Vec<f64> {
    assert!(h % m == 0 && w % m == 0);
    let (oh, ow) = (h / m, w / m);
    let inv = 1.0 / (m * m) as f64;
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..m {
                    for dx in 0..m {
                        acc += x[((oy * m + dy) * w + (ox * m + dx)) * c + ch];
                    }
                }
                out[(oy * ow + ox) * c + ch] = acc * inv;
            }
        }
    }
    out
}

/// f64 replica of the downsampling network for any block kind and depth:
/// the resolution-changing first stage (ReLU bound to its convolution
/// output), stride-1 middle stages with ReLU, a linear head, plus the
/// bicubic skip. Resample weights are the library's own f32 taps widened to
/// f64 — those taps are pinned separately by the resampler oracles, so this
/// replica isolates the surrounding arithmetic and the backward pass.
///
/// Because each parameter enters the graph exactly once and every op is
/// linear or piecewise linear, the loss along any single-parameter line is
/// piecewise linear: one-sided f64 difference quotients are *equal* (to
/// rounding) unless a ReLU kink falls inside the probed interval, which
/// makes kink detection exact.
pub struct OracleNet {
    pub convs: Vec<ConvLayer>,
    pub kind: BlockKind,
    pub scale: RationalScale,
}

impl OracleNet {
    pub fn from_network(net: &Network) -> Self {
        OracleNet { convs: net.convs.clone(), kind: net.kind, scale: net.scale }
    }

    /// Forward for one image plane `(h, w, 3)` flat in f64.
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let oh = self.scale.down_len(h).unwrap();
        let ow = self.scale.down_len(w).unwrap();
        let depth = self.convs.len();
        let mid_ch = self.convs[0].out_ch;
        let mut cur = match self.kind {
            BlockKind::StridedConv => relu_f64(&conv_plane_f64(x, h, w, &self.convs[0]).0),
            BlockKind::ConvPool => {
                let m = self.scale.integer_factor().unwrap() as usize;
                let a = relu_f64(&conv_plane_f64(x, h, w, &self.convs[0]).0);
                avg_pool_f64(&a, h, w, mid_ch, m)
            }
            BlockKind::ConvResize => {
                let a = relu_f64(&conv_plane_f64(x, h, w, &self.convs[0]).0);
                resize_plane_f64(&a, h, w, mid_ch, FilterKind::bilinear(), oh, ow)
            }
            BlockKind::ResizeConv => {
                let d = resize_plane_f64(x, h, w, 3, FilterKind::bilinear(), oh, ow);
                relu_f64(&conv_plane_f64(&d, oh, ow, &self.convs[0]).0)
            }
        };
        for i in 1..depth - 1 {
            cur = relu_f64(&conv_plane_f64(&cur, oh, ow, &self.convs[i]).0);
        }
        cur = conv_plane_f64(&cur, oh, ow, &self.convs[depth - 1]).0;
        let skip = resize_plane_f64(x, h, w, 3, FilterKind::bicubic(), oh, ow);
        cur.iter().zip(&skip).map(|(a, s)| a + s).collect()
    }

    /// `Σ probe · forward(x)`.
    pub fn loss(&self, x: &[f64], h: usize, w: usize, probe: &[f64]) -> f64 {
        self.forward(x, h, w).iter().zip(probe).map(|(y, p)| y * p).sum()
    }
}
