//! Resolution-changing blocks and the residual downsampling network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::conv::{
    avg_pool_backward, conv2d_forward, conv2d_grad_params, conv2d_grad_x, relu, relu_backward,
    ConvLayer, PoolKind, PoolLayer,
};
use crate::resample::{resize_backward, resize_by_scale, Direction, FilterKind};
use crate::tensor::{RationalScale, Tensor};

/// How the first stage changes resolution.
///
/// `StridedConv` and `ConvPool` can only step down by whole factors;
/// `ConvResize` and `ResizeConv` accept any rational factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Convolution with stride M.
    StridedConv,
    /// Stride-1 convolution, then M×M average pooling.
    ConvPool,
    /// Stride-1 convolution, then bilinear resize down — filters at full
    /// resolution before any decimation.
    ConvResize,
    /// Bilinear resize down, then stride-1 convolution — the layer only ever
    /// sees the already-decimated signal.
    ResizeConv,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] =
        [BlockKind::StridedConv, BlockKind::ConvPool, BlockKind::ConvResize, BlockKind::ResizeConv];

    /// Stable name used by the CLI and checkpoint header.
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::StridedConv => "strided",
            BlockKind::ConvPool => "conv-pool",
            BlockKind::ConvResize => "conv-resize",
            BlockKind::ResizeConv => "resize-conv",
        }
    }

    /// Whether this block can realize the factor at all.
    pub fn supports(&self, scale: RationalScale) -> bool {
        match self {
            BlockKind::StridedConv | BlockKind::ConvPool => scale.integer_factor().is_some(),
            BlockKind::ConvResize | BlockKind::ResizeConv => true,
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strided" => Ok(BlockKind::StridedConv),
            "conv-pool" => Ok(BlockKind::ConvPool),
            "conv-resize" => Ok(BlockKind::ConvResize),
            "resize-conv" => Ok(BlockKind::ResizeConv),
            other => Err(Error::InvalidConfig(format!("unknown block kind {other:?}"))),
        }
    }
}

/// Runs one resolution-changing block in isolation (no activation —
/// activations belong to the network assembly). Output spatial dims are
/// `(H·q/p, W·q/p)` for every kind.
pub fn block_forward(
    x: &Tensor,
    kind: BlockKind,
    layer: &ConvLayer,
    scale: RationalScale,
) -> Result<Tensor> {
    let integer = || {
        scale.integer_factor().ok_or_else(|| Error::InfeasibleKindForScale {
            kind: kind.name().to_string(),
            p: scale.p(),
            q: scale.q(),
        })
    };
    let with_stride = |stride: usize| {
        let mut l = layer.clone();
        l.stride = stride;
        l
    };
    match kind {
        BlockKind::StridedConv => {
            let m = integer()? as usize;
            let s = x.shape();
            // ceil semantics would silently change dims; hold the exactness contract
            if s.h % m != 0 {
                return Err(Error::IndivisibleSize { dim: s.h, p: m as u32, q: 1 });
            }
            if s.w % m != 0 {
                return Err(Error::IndivisibleSize { dim: s.w, p: m as u32, q: 1 });
            }
            conv2d_forward(x, &with_stride(m))
        }
        BlockKind::ConvPool => {
            let m = integer()? as usize;
            let y = conv2d_forward(x, &with_stride(1))?;
            PoolLayer::new(PoolKind::Average, m).forward(&y)
        }
        BlockKind::ConvResize => {
            let y = conv2d_forward(x, &with_stride(1))?;
            resize_by_scale(&y, FilterKind::bilinear(), scale, Direction::Down)
        }
        BlockKind::ResizeConv => {
            let y = resize_by_scale(x, FilterKind::bilinear(), scale, Direction::Down)?;
            conv2d_forward(&y, &with_stride(1))
        }
    }
}

/// One step of the network's op chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    /// Convolution using `convs[i]` (its stored stride applies).
    Conv(usize),
    Relu,
    /// Bilinear resize down by the network scale.
    ResizeDown,
    AvgPool(usize),
}

/// Per-stage parameter gradients, aligned with [`Network::convs`].
#[derive(Debug, Clone)]
pub struct StageGrads {
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

/// Gradients for every convolution stage. The fixed-filter skip path is
/// parameter-free, so it contributes nothing here.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub stages: Vec<StageGrads>,
}

#[derive(Debug)]
struct ForwardCache {
    /// `vals[i]` is the input to `steps[i]`; the final entry is the op-chain
    /// output before the skip connection is added.
    vals: Vec<Tensor>,
}

/// Residual downsampling network: a resolution-changing first stage, stride-1
/// 64-channel stages, and a 3-channel head added to a bicubic downsample of
/// the input.
///
/// Freshly built, the head is zero, so the network reproduces the bicubic
/// downsample exactly — training starts from the fixed-filter baseline and
/// learns a correction on top of it.
#[derive(Debug)]
pub struct Network {
    pub kind: BlockKind,
    pub scale: RationalScale,
    pub convs: Vec<ConvLayer>,
    pub seed: u64,
    /// Optimizer steps applied so far (carried through checkpoints).
    pub iterations: u64,
    steps: Vec<Step>,
    cache: Option<ForwardCache>,
}

/// Number of convolution stages in the full network.
pub const FULL_DEPTH: usize = 10;
const MID_CHANNELS: usize = 64;
const IMAGE_CHANNELS: usize = 3;

/// Builds the full 10-stage network. See [`build_network_with_depth`].
pub fn build_network(scale: RationalScale, kind: BlockKind, rng_seed: u64) -> Result<Network> {
    build_network_with_depth(scale, kind, rng_seed, FULL_DEPTH)
}

/// Builds a network with `depth` convolution stages (min 2): stage 1 is the
/// resolution-changing block (3→64), the middle stages are 3×3/stride-1
/// 64→64 with ReLU, and the last stage maps 64→3 with no activation.
///
/// ReLU-activated stages get He-scaled Gaussian weights (std `√(2/fan_in)`)
/// drawn from a seeded generator; the last stage's weights and every bias
/// start at zero so the residual head is silent at initialization. The same
/// seed always yields bitwise-identical parameters.
pub fn build_network_with_depth(
    scale: RationalScale,
    kind: BlockKind,
    rng_seed: u64,
    depth: usize,
) -> Result<Network> {
    assert!(depth >= 2, "need at least a block stage and a head stage");
    if !kind.supports(scale) {
        return Err(Error::InfeasibleKindForScale {
            kind: kind.name().to_string(),
            p: scale.p(),
            q: scale.q(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut he_conv = |in_ch: usize, out_ch: usize, stride: usize| -> ConvLayer {
        let mut l = ConvLayer::zeros(3, 3, in_ch, out_ch, stride);
        let std = (2.0 / (l.kh * l.kw * in_ch) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is positive and finite");
        for w in l.weights.iter_mut() {
            *w = normal.sample(&mut rng) as f32;
        }
        l
    };

    let stage1_stride = match kind {
        BlockKind::StridedConv => scale.integer_factor().unwrap() as usize,
        _ => 1,
    };
    let mut convs = vec![he_conv(IMAGE_CHANNELS, MID_CHANNELS, stage1_stride)];
    for _ in 0..depth - 2 {
        convs.push(he_conv(MID_CHANNELS, MID_CHANNELS, 1));
    }
    convs.push(ConvLayer::zeros(3, 3, MID_CHANNELS, IMAGE_CHANNELS, 1));

    Ok(Network::assemble(kind, scale, convs, rng_seed, 0))
}

impl Network {
    /// Wires the op chain for `kind` around an existing stage list. Used by
    /// the builder and the checkpoint loader.
    pub(crate) fn assemble(
        kind: BlockKind,
        scale: RationalScale,
        convs: Vec<ConvLayer>,
        seed: u64,
        iterations: u64,
    ) -> Network {
        let depth = convs.len();
        let mut steps = Vec::new();
        // Stage 1: the resolution change. ReLU binds to the convolution
        // output in every kind.
        match kind {
            BlockKind::StridedConv => {
                steps.push(Step::Conv(0));
                steps.push(Step::Relu);
            }
            BlockKind::ConvPool => {
                steps.push(Step::Conv(0));
                steps.push(Step::Relu);
                steps.push(Step::AvgPool(scale.integer_factor().unwrap_or(1) as usize));
            }
            BlockKind::ConvResize => {
                steps.push(Step::Conv(0));
                steps.push(Step::Relu);
                steps.push(Step::ResizeDown);
            }
            BlockKind::ResizeConv => {
                steps.push(Step::ResizeDown);
                steps.push(Step::Conv(0));
                steps.push(Step::Relu);
            }
        }
        // Middle stages with ReLU, then the linear head.
        for i in 1..depth - 1 {
            steps.push(Step::Conv(i));
            steps.push(Step::Relu);
        }
        steps.push(Step::Conv(depth - 1));
        Network { kind, scale, convs, seed, iterations, steps, cache: None }
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    /// Total learnable parameter count (weights + biases).
    pub fn parameter_count(&self) -> usize {
        self.convs.iter().map(|c| c.parameter_count()).sum()
    }

    fn eval_step(&self, step: Step, x: &Tensor) -> Result<Tensor> {
        match step {
            Step::Conv(i) => conv2d_forward(x, &self.convs[i]),
            Step::Relu => Ok(relu(x)),
            Step::ResizeDown => {
                resize_by_scale(x, FilterKind::bilinear(), self.scale, Direction::Down)
            }
            Step::AvgPool(m) => PoolLayer::new(PoolKind::Average, m).forward(x),
        }
    }

    /// Runs the network. Input must be 3-channel with spatial dims exactly
    /// divisible for the scale. With `keep_intermediates` the activations are
    /// retained for a following [`Network::backward`] call.
    pub fn forward(&mut self, x: &Tensor, keep_intermediates: bool) -> Result<Tensor> {
        let s = x.shape();
        if s.c != IMAGE_CHANNELS {
            return Err(Error::ChannelMismatch { want: IMAGE_CHANNELS, got: s.c });
        }
        self.scale.down_len(s.h)?;
        self.scale.down_len(s.w)?;

        let skip = resize_by_scale(x, FilterKind::bicubic(), self.scale, Direction::Down)?;
        let mut cur = x.clone();
        let mut vals = Vec::with_capacity(self.steps.len() + 1);
        for &step in &self.steps {
            let next = self.eval_step(step, &cur)?;
            if keep_intermediates {
                vals.push(std::mem::replace(&mut cur, next));
            } else {
                cur = next;
            }
        }
        let y = cur.add(&skip)?;
        if keep_intermediates {
            vals.push(cur);
            self.cache = Some(ForwardCache { vals });
        }
        Ok(y)
    }

    /// Parameter gradients for the most recent kept forward pass, given the
    /// loss gradient at the output. The skip path is parameter-free and adds
    /// `grad_out` straight to the op chain's tail gradient (identity).
    pub fn backward(&self, grad_out: &Tensor) -> Result<NetworkGrads> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardState)?;
        let tail = cache.vals.last().expect("cache always holds the chain output");
        if grad_out.shape() != tail.shape() {
            return Err(Error::ShapeMismatch(
                grad_out.shape().to_string(),
                tail.shape().to_string(),
            ));
        }
        let mut stages: Vec<StageGrads> = self
            .convs
            .iter()
            .map(|c| StageGrads { w: vec![0.0; c.weights.len()], b: vec![0.0; c.out_ch] })
            .collect();

        let first_conv = self
            .steps
            .iter()
            .position(|s| matches!(s, Step::Conv(_)))
            .expect("network always has conv stages");
        let mut g = grad_out.clone();
        for (j, &step) in self.steps.iter().enumerate().rev() {
            let input = &cache.vals[j];
            match step {
                Step::Conv(i) => {
                    let (gw, gb) = conv2d_grad_params(input, &self.convs[i], &g)?;
                    stages[i] = StageGrads { w: gw, b: gb };
                    if j == first_conv {
                        // Everything before this op is parameter-free; the
                        // input gradient is not needed.
                        break;
                    }
                    g = conv2d_grad_x(input.shape(), &self.convs[i], &g);
                }
                Step::Relu => {
                    g = relu_backward(&cache.vals[j + 1], &g)?;
                }
                Step::ResizeDown => {
                    let s = input.shape();
                    g = resize_backward(&g, FilterKind::bilinear(), s.h, s.w)?;
                }
                Step::AvgPool(m) => {
                    g = avg_pool_backward(input, m, &g)?;
                }
            }
        }
        Ok(NetworkGrads { stages })
    }

    /// Drops stored forward state (e.g. before saving).
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
