//! Learned fractional downsampling for video encode ladders.
//!
//! This crate implements a compact toolkit for downscaling images and video
//! by rational factors `q/p` (e.g. 2/3, 2/5) ahead of encoding, and for
//! measuring whether a learned downscaler beats a fixed filter:
//!
//! - [`tensor`]: a minimal NHWC `f32` tensor with deterministic reductions.
//! - [`resample`]: separable bilinear / bicubic / Lanczos resizers built as
//!   explicit sparse row operators, with an exact adjoint for backprop.
//! - [`nn`]: stride-1 convolutions, resolution-changing blocks (conv→resize,
//!   resize→conv, strided conv, conv→pool), and the 10-stage downsampling
//!   network with a fixed-filter skip connection.
//! - [`train`]: the end-to-end loop that trains the downsampler through a
//!   fixed differentiable upsampler against a reconstruction loss.
//! - [`metrics`]: PSNR, SSIM, rate–quality curves, and BD-rate.
//! - [`media`]: PNG and Y4M/YUV420 I/O with BT.709 limited-range conversion.
//! - [`harness`]: encode-ladder evaluation (external encoder or raw-size
//!   proxy mode) and A/B comparisons between block orderings.
//!
//! Everything is deterministic: the same seed and inputs produce bitwise
//! identical weights, losses, and reports.

pub mod error;
pub mod harness;
pub mod media;
pub mod metrics;
pub mod nn;
pub mod resample;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{RationalScale, Shape, Tensor};
