//! 2-D convolution, pooling, and ReLU with exact hand-derived backward
//! passes.
//!
//! Convolution is cross-correlation over NHWC tensors with 'same' zero
//! padding: output spatial dims are `ceil(H/s) × ceil(W/s)`, and a strided
//! pass equals the dense stride-1 result sampled at multiples of `s`.
//! Weights are laid out `[ky][kx][in_ch][out_ch]` so the innermost loops are
//! contiguous channel slices — everything hot is an axpy the compiler can
//! vectorize. All loops run in a fixed order; results are bitwise
//! reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One convolution layer: 4-D weights `[kh][kw][in_ch][out_ch]` (flat),
/// per-output-channel bias, and a stride.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kh: usize,
    pub kw: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    /// All-zero layer of the given geometry.
    pub fn zeros(kh: usize, kw: usize, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel dims must be odd for 'same' padding");
        assert!(stride >= 1);
        ConvLayer {
            kh,
            kw,
            in_ch,
            out_ch,
            stride,
            weights: vec![0.0; kh * kw * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    /// Flat index of weight `(ky, kx, ic, oc)`.
    #[inline(always)]
    pub fn w_index(&self, ky: usize, kx: usize, ic: usize, oc: usize) -> usize {
        ((ky * self.kw + kx) * self.in_ch + ic) * self.out_ch + oc
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Output spatial dims for an input of `(h, w)`.
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }
}

/// Cross-correlates `x` with the layer's kernel, adds bias.
///
/// 'Same' padding of `(k−1)/2` zeros on every side; output position
/// `(oy, ox)` reads the window centered at `(oy·s, ox·s)`.
pub fn conv2d_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let s = x.shape();
    if s.c != layer.in_ch {
        return Err(Error::ChannelMismatch { want: layer.in_ch, got: s.c });
    }
    let (out_h, out_w) = layer.out_dims(s.h, s.w);
    let (kh, kw) = (layer.kh, layer.kw);
    let (pad_y, pad_x) = ((kh - 1) / 2, (kw - 1) / 2);
    let (ic, oc) = (layer.in_ch, layer.out_ch);
    let stride = layer.stride;

    let mut out = Tensor::zeros(Shape::new(s.n, out_h, out_w, oc));
    let xd = x.data();
    let wd = &layer.weights;
    let od = out.data_mut();
    for n in 0..s.n {
        for oy in 0..out_h {
            let base_y = (oy * stride) as i64 - pad_y as i64;
            for ox in 0..out_w {
                let base_x = (ox * stride) as i64 - pad_x as i64;
                let o_px = ((n * out_h + oy) * out_w + ox) * oc;
                let acc = &mut od[o_px..o_px + oc];
                acc.copy_from_slice(&layer.bias);
                for ky in 0..kh {
                    let iy = base_y + ky as i64;
                    if iy < 0 || iy >= s.h as i64 {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = base_x + kx as i64;
                        if ix < 0 || ix >= s.w as i64 {
                            continue;
                        }
                        let x_px = ((n * s.h + iy as usize) * s.w + ix as usize) * ic;
                        let w_base = (ky * kw + kx) * ic * oc;
                        for i in 0..ic {
                            let xv = xd[x_px + i];
                            let ws = &wd[w_base + i * oc..w_base + (i + 1) * oc];
                            for (a, &w) in acc.iter_mut().zip(ws) {
                                *a += xv * w;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub x: Tensor,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights,
/// and bias. `grad_out` must have the forward output's shape.
pub fn conv2d_backward(x: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    let (gw, gb) = conv2d_grad_params(x, layer, grad_out)?;
    let gx = conv2d_grad_x(x.shape(), layer, grad_out);
    Ok(ConvGrads { x: gx, w: gw, b: gb })
}

fn check_grad_shape(x: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.c != layer.in_ch {
        return Err(Error::ChannelMismatch { want: layer.in_ch, got: s.c });
    }
    let (out_h, out_w) = layer.out_dims(s.h, s.w);
    let want = Shape::new(s.n, out_h, out_w, layer.out_ch);
    if grad_out.shape() != want {
        return Err(Error::ShapeMismatch(grad_out.shape().to_string(), want.to_string()));
    }
    Ok(())
}

/// Weight and bias gradients. Weights accumulate in `f32` over a fixed loop
/// order; bias sums in `f64` (it is a plain reduction over the whole map).
pub(crate) fn conv2d_grad_params(
    x: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> Result<(Vec<f32>, Vec<f32>)> {
    check_grad_shape(x, layer, grad_out)?;
    let s = x.shape();
    let (out_h, out_w) = layer.out_dims(s.h, s.w);
    let (kh, kw) = (layer.kh, layer.kw);
    let (pad_y, pad_x) = ((kh - 1) / 2, (kw - 1) / 2);
    let (ic, oc) = (layer.in_ch, layer.out_ch);
    let stride = layer.stride;

    let mut gw = vec![0.0f32; layer.weights.len()];
    let mut gb = vec![0.0f64; oc];
    let xd = x.data();
    let gd = grad_out.data();
    for n in 0..s.n {
        for oy in 0..out_h {
            let base_y = (oy * stride) as i64 - pad_y as i64;
            for ox in 0..out_w {
                let base_x = (ox * stride) as i64 - pad_x as i64;
                let g_px = ((n * out_h + oy) * out_w + ox) * oc;
                let g = &gd[g_px..g_px + oc];
                for (acc, &gv) in gb.iter_mut().zip(g) {
                    *acc += gv as f64;
                }
                for ky in 0..kh {
                    let iy = base_y + ky as i64;
                    if iy < 0 || iy >= s.h as i64 {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = base_x + kx as i64;
                        if ix < 0 || ix >= s.w as i64 {
                            continue;
                        }
                        let x_px = ((n * s.h + iy as usize) * s.w + ix as usize) * ic;
                        let w_base = (ky * kw + kx) * ic * oc;
                        for i in 0..ic {
                            let xv = xd[x_px + i];
                            let acc = &mut gw[w_base + i * oc..w_base + (i + 1) * oc];
                            for (a, &gv) in acc.iter_mut().zip(g) {
                                *a += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gw, gb.into_iter().map(|v| v as f32).collect()))
}

/// Input gradient. Stride 1 uses a gather over a transposed weight copy so
/// the inner loop stays an axpy; general strides use the direct scatter.
pub(crate) fn conv2d_grad_x(x_shape: Shape, layer: &ConvLayer, grad_out: &Tensor) -> Tensor {
    let s = x_shape;
    let (out_h, out_w) = layer.out_dims(s.h, s.w);
    let (kh, kw) = (layer.kh, layer.kw);
    let (pad_y, pad_x) = ((kh - 1) / 2, (kw - 1) / 2);
    let (ic, oc) = (layer.in_ch, layer.out_ch);
    let mut gx = Tensor::zeros(s);
    let gd = grad_out.data();

    if layer.stride == 1 {
        // wt[ky][kx][oc][ic]
        let mut wt = vec![0.0f32; layer.weights.len()];
        for ky in 0..kh {
            for kx in 0..kw {
                for i in 0..ic {
                    for o in 0..oc {
                        wt[((ky * kw + kx) * oc + o) * ic + i] =
                            layer.weights[layer.w_index(ky, kx, i, o)];
                    }
                }
            }
        }
        let gxd = gx.data_mut();
        for n in 0..s.n {
            for iy in 0..s.h {
                for ix in 0..s.w {
                    let px = ((n * s.h + iy) * s.w + ix) * ic;
                    let acc = &mut gxd[px..px + ic];
                    for ky in 0..kh {
                        let oy = iy as i64 + pad_y as i64 - ky as i64;
                        if oy < 0 || oy >= out_h as i64 {
                            continue;
                        }
                        for kx in 0..kw {
                            let ox = ix as i64 + pad_x as i64 - kx as i64;
                            if ox < 0 || ox >= out_w as i64 {
                                continue;
                            }
                            let g_px = ((n * out_h + oy as usize) * out_w + ox as usize) * oc;
                            let w_base = (ky * kw + kx) * oc * ic;
                            for o in 0..oc {
                                let gv = gd[g_px + o];
                                let ws = &wt[w_base + o * ic..w_base + (o + 1) * ic];
                                for (a, &w) in acc.iter_mut().zip(ws) {
                                    *a += gv * w;
                                }
                            }
                        }
                    }
                }
            }
        }
        return gx;
    }

    let stride = layer.stride;
    let gxd = gx.data_mut();
    for n in 0..s.n {
        for oy in 0..out_h {
            let base_y = (oy * stride) as i64 - pad_y as i64;
            for ox in 0..out_w {
                let base_x = (ox * stride) as i64 - pad_x as i64;
                let g_px = ((n * out_h + oy) * out_w + ox) * oc;
                for ky in 0..kh {
                    let iy = base_y + ky as i64;
                    if iy < 0 || iy >= s.h as i64 {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = base_x + kx as i64;
                        if ix < 0 || ix >= s.w as i64 {
                            continue;
                        }
                        let x_px = ((n * s.h + iy as usize) * s.w + ix as usize) * ic;
                        let w_base = (ky * kw + kx) * ic * oc;
                        for i in 0..ic {
                            let mut acc = 0.0f32;
                            let ws = &layer.weights[w_base + i * oc..w_base + (i + 1) * oc];
                            for (o, &w) in ws.iter().enumerate() {
                                acc += w * gd[g_px + o];
                            }
                            gxd[x_px + i] += acc;
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// ReLU gradient from the *activated* output: passes gradient where the
/// output is positive. (At exactly 0 the subgradient 0 is used.)
pub fn relu_backward(activated: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let mut g = grad_out.clone();
    if activated.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(
            activated.shape().to_string(),
            grad_out.shape().to_string(),
        ));
    }
    for (gv, &a) in g.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Pooling flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Average,
}

/// Non-overlapping `M×M` pooling; input dims must be divisible by `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayer {
    pub kind: PoolKind,
    pub factor: usize,
}

impl PoolLayer {
    pub fn new(kind: PoolKind, factor: usize) -> Self {
        assert!(factor >= 1);
        PoolLayer { kind, factor }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let m = self.factor;
        if s.h % m != 0 {
            return Err(Error::IndivisibleSize { dim: s.h, p: m as u32, q: 1 });
        }
        if s.w % m != 0 {
            return Err(Error::IndivisibleSize { dim: s.w, p: m as u32, q: 1 });
        }
        let (oh, ow) = (s.h / m, s.w / m);
        let mut out = Tensor::zeros(Shape::new(s.n, oh, ow, s.c));
        let inv = 1.0 / (m * m) as f32;
        for n in 0..s.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for c in 0..s.c {
                        let mut acc = match self.kind {
                            PoolKind::Max => f32::NEG_INFINITY,
                            PoolKind::Average => 0.0,
                        };
                        for dy in 0..m {
                            for dx in 0..m {
                                let v = x.get(n, oy * m + dy, ox * m + dx, c);
                                acc = match self.kind {
                                    PoolKind::Max => acc.max(v),
                                    PoolKind::Average => acc + v,
                                };
                            }
                        }
                        if self.kind == PoolKind::Average {
                            acc *= inv;
                        }
                        out.set(n, oy, ox, c, acc);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient through the pool. Average distributes evenly; max routes to
    /// the first maximal element in scan order (recomputed from `x`).
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let m = self.factor;
        let want = Shape::new(s.n, s.h / m, s.w / m, s.c);
        if grad_out.shape() != want {
            return Err(Error::ShapeMismatch(grad_out.shape().to_string(), want.to_string()));
        }
        let mut gx = Tensor::zeros(s);
        let inv = 1.0 / (m * m) as f32;
        for n in 0..want.n {
            for oy in 0..want.h {
                for ox in 0..want.w {
                    for c in 0..s.c {
                        let g = grad_out.get(n, oy, ox, c);
                        match self.kind {
                            PoolKind::Average => {
                                for dy in 0..m {
                                    for dx in 0..m {
                                        let prev = gx.get(n, oy * m + dy, ox * m + dx, c);
                                        gx.set(n, oy * m + dy, ox * m + dx, c, prev + g * inv);
                                    }
                                }
                            }
                            PoolKind::Max => {
                                let (mut by, mut bx) = (0, 0);
                                let mut best = f32::NEG_INFINITY;
                                for dy in 0..m {
                                    for dx in 0..m {
                                        let v = x.get(n, oy * m + dy, ox * m + dx, c);
                                        if v > best {
                                            best = v;
                                            by = dy;
                                            bx = dx;
                                        }
                                    }
                                }
                                let prev = gx.get(n, oy * m + by, ox * m + bx, c);
                                gx.set(n, oy * m + by, ox * m + bx, c, prev + g);
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Convenience wrapper used by the network backward pass.
pub fn avg_pool_backward(x: &Tensor, factor: usize, grad_out: &Tensor) -> Result<Tensor> {
    PoolLayer::new(PoolKind::Average, factor).backward(x, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 3×3 kernel that copies the center pixel of channel `c` to channel `c`.
    fn delta_layer(ch: usize, stride: usize) -> ConvLayer {
        let mut l = ConvLayer::zeros(3, 3, ch, ch, stride);
        for c in 0..ch {
            let i = l.w_index(1, 1, c, c);
            l.weights[i] = 1.0;
        }
        l
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.6]).unwrap();
        let y = conv2d_forward(&x, &delta_layer(1, 1)).unwrap();
        assert_eq!(y.data(), &[0.6]);

        let data: Vec<f32> = (0..27).map(|i| i as f32 * 0.1).collect();
        let x = Tensor::from_vec(Shape::new(1, 3, 3, 3), data.clone()).unwrap();
        let y = conv2d_forward(&x, &delta_layer(3, 1)).unwrap();
        assert_eq!(y.data(), data.as_slice());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::filled(Shape::new(1, 3, 3, 1), 1.0);
        let mut l = ConvLayer::zeros(3, 3, 1, 1, 1);
        l.weights.fill(1.0);
        let y = conv2d_forward(&x, &l).unwrap();
        assert_eq!(y.get(0, 1, 1, 0), 9.0); // full window
        assert_eq!(y.get(0, 0, 0, 0), 4.0); // corner sees a 2x2 window
        assert_eq!(y.get(0, 0, 1, 0), 6.0); // edge sees a 2x3 window
    }

    #[test]
    fn bias_is_added() {
        let x = Tensor::zeros(Shape::new(1, 2, 2, 1));
        let mut l = ConvLayer::zeros(3, 3, 1, 2, 1);
        l.bias = vec![0.25, -1.0];
        let y = conv2d_forward(&x, &l).unwrap();
        assert_eq!(y.get(0, 1, 1, 0), 0.25);
        assert_eq!(y.get(0, 0, 0, 1), -1.0);
    }

    #[test]
    fn stride_two_dims_use_ceil() {
        let l = delta_layer(1, 2);
        assert_eq!(l.out_dims(4, 4), (2, 2));
        assert_eq!(l.out_dims(5, 7), (3, 4));
        let x = Tensor::from_vec(
            Shape::new(1, 4, 4, 1),
            (0..16).map(|i| i as f32).collect(),
        )
        .unwrap();
        let y = conv2d_forward(&x, &l).unwrap();
        // Delta kernel + stride 2 picks the even-grid pixels.
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 4, 4, 2));
        let err = conv2d_forward(&x, &delta_layer(3, 1)).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { want: 3, got: 2 }));
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let x = Tensor::filled(Shape::new(1, 4, 4, 2), 0.3);
        let l = delta_layer(2, 1);
        let g = Tensor::zeros(Shape::new(1, 4, 4, 2));
        let grads = conv2d_backward(&x, &l, &g).unwrap();
        assert!(grads.x.data().iter().all(|&v| v == 0.0));
        assert!(grads.w.iter().all(|&v| v == 0.0));
        assert!(grads.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_routes_single_pixel_back() {
        let x = Tensor::zeros(Shape::new(1, 4, 4, 1));
        let l = delta_layer(1, 1);
        let mut g = Tensor::zeros(Shape::new(1, 4, 4, 1));
        g.set(0, 2, 1, 0, 1.0);
        let grads = conv2d_backward(&x, &l, &g).unwrap();
        assert_eq!(grads.x.get(0, 2, 1, 0), 1.0);
        assert_eq!(grads.x.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(grads.b, vec![1.0]);
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::zeros(Shape::new(1, 4, 4, 1));
        let g = Tensor::zeros(Shape::new(1, 3, 3, 1));
        let err = conv2d_backward(&x, &delta_layer(1, 1), &g).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_, _)));
    }

    #[test]
    fn relu_and_its_gradient() {
        let x = Tensor::from_vec(Shape::new(1, 1, 4, 1), vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = Tensor::filled(Shape::new(1, 1, 4, 1), 1.0);
        let gx = relu_backward(&y, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn average_pool_means_blocks() {
        let x = Tensor::from_vec(
            Shape::new(1, 2, 4, 1),
            vec![1.0, 3.0, 0.0, 8.0, 5.0, 7.0, 4.0, 0.0],
        )
        .unwrap();
        let y = PoolLayer::new(PoolKind::Average, 2).forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0, 3.0]);
    }

    #[test]
    fn max_pool_picks_maxima_and_routes_gradient() {
        let x = Tensor::from_vec(
            Shape::new(1, 2, 2, 1),
            vec![1.0, 3.0, 2.0, 0.0],
        )
        .unwrap();
        let pool = PoolLayer::new(PoolKind::Max, 2);
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0]);
        let g = Tensor::filled(Shape::new(1, 1, 1, 1), 2.0);
        let gx = pool.backward(&x, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn average_pool_backward_distributes() {
        let x = Tensor::zeros(Shape::new(1, 2, 2, 1));
        let g = Tensor::filled(Shape::new(1, 1, 1, 1), 1.0);
        let gx = avg_pool_backward(&x, 2, &g).unwrap();
        assert_eq!(gx.data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn pool_requires_divisible_dims() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 1));
        let err = PoolLayer::new(PoolKind::Average, 2).forward(&x).unwrap_err();
        assert!(matches!(err, Error::IndivisibleSize { dim: 3, p: 2, q: 1 }));
    }
}
