//! Crate-wide error type.
//!
//! One enum covers all modules; variants are named for the condition they
//! report so call sites and tests can match on them directly.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- tensors & shapes ----
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(String, String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("data length {got} does not match shape volume {want}")]
    InvalidLength { got: usize, want: usize },
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),

    // ---- scales & resizing ----
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("dimension {dim} is not divisible for scale {p}/{q}")]
    IndivisibleSize { dim: usize, p: u32, q: u32 },
    #[error("scale {p}/{q} not representable by {kind} (integer factor required)")]
    InfeasibleKindForScale { kind: String, p: u32, q: u32 },
    #[error("resample requires positive lengths (src {src}, dst {dst})")]
    InvalidResampleLength { src: usize, dst: usize },

    // ---- network & checkpoints ----
    #[error("channel mismatch: layer expects {want} input channels, got {got}")]
    ChannelMismatch { want: usize, got: usize },
    #[error("backward called without a stored forward pass (run forward with keep_intermediates)")]
    NoForwardState,
    #[error("checkpoint is truncated or corrupt: {0}")]
    TruncatedFile(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    // ---- training ----
    #[error("scale {p}/{q} too large for crop base {base} (need base ≥ {p})")]
    ScaleTooLarge { p: u32, q: u32, base: usize },
    #[error("image {h}x{w} too small to crop {crop} (scale {p}/{q})")]
    ImageTooSmall { h: usize, w: usize, crop: usize, p: u32, q: u32 },
    #[error("dataset {0} contains no usable images")]
    EmptyDataset(String),
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(u64),
    #[error("invalid config entry: {0}")]
    InvalidConfig(String),
    #[error("optimizer state has {got} parameter groups, model has {want}")]
    MismatchedState { got: usize, want: usize },

    // ---- metrics & curves ----
    #[error("SSIM window {win} exceeds image dimension {dim}")]
    WindowTooLarge { win: usize, dim: usize },
    #[error("invalid rate-quality curve: {0}")]
    InvalidCurve(String),
    #[error("rate-quality curves do not overlap in quality range")]
    NoOverlap,
    #[error("need at least {need} points for {what}, got {got}")]
    TooFewPoints { what: String, need: usize, got: usize },
    #[error("curve is not monotonic at indices {0:?}; clean the data or re-measure")]
    NonMonotonicCurve(Vec<usize>),
    #[error("metric column {0} is absent from one of the curves")]
    MissingMetric(String),
    #[error("malformed curve CSV at line {line}: {msg}")]
    CurveParse { line: usize, msg: String },

    // ---- media ----
    #[error("YUV420 requires even dimensions, got {0}x{1}")]
    OddDimensions(usize, usize),
    #[error("invalid frame dimensions {0}x{1}")]
    InvalidDimensions(usize, usize),
    #[error("unsupported colorspace tag {0:?} (only 4:2:0 variants are handled)")]
    UnsupportedColorspace(String),
    #[error("malformed stream header: {0}")]
    BadStreamHeader(String),
    #[error("stream ended mid-frame (frame {0})")]
    TruncatedStream(usize),
    #[error("image decode failed: {0}")]
    Decode(String),

    // ---- harness ----
    #[error("curves are not comparable: {0}")]
    CurveMismatch(String),
    #[error("command template {0:?} is empty")]
    EmptyCommand(String),
    #[error("encoder exited with status {status}: {stderr}")]
    EncoderFailure { status: i32, stderr: String },
    #[error("decoder exited with status {status}: {stderr}")]
    DecoderFailure { status: i32, stderr: String },
    #[error("{0}")]
    Harness(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
