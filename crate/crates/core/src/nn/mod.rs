//! Convolution layers, resolution-changing blocks, and the downsampling
//! network.
//!
//! The network is a plain residual CNN: a resolution-changing first stage,
//! stride-1 3×3 stages in the middle, and a 3-channel head whose output is
//! added to a fixed bicubic downsample of the input. Four first-stage block
//! flavors are supported; only the two that route through the differentiable
//! resizer ([`BlockKind::ConvResize`], [`BlockKind::ResizeConv`]) can realize
//! fractional factors — strided convolution and pooling are stuck on integer
//! strides, which is the reason the conv→resize design exists at all.
//!
//! Backward passes are hand-derived and exact for the ops used (the resizer
//! backward is the transpose of its forward operator), so finite-difference
//! checks agree to first order everywhere ReLU is differentiable.

mod checkpoint;
mod conv;
mod network;

pub use conv::{
    avg_pool_backward, conv2d_backward, conv2d_forward, relu, relu_backward, ConvGrads, ConvLayer,
    PoolKind, PoolLayer,
};
pub use network::{
    block_forward, build_network, build_network_with_depth, BlockKind, Network, NetworkGrads,
    StageGrads, FULL_DEPTH,
};
