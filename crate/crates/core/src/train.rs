//! End-to-end training of the downsampling network.
//!
//! The loop mirrors deployment with the codec removed: crop a batch,
//! downsample with the network, upsample with a fixed differentiable filter,
//! and score the reconstruction against the source crop with mean squared
//! error. Gradients flow through the upsampler's transpose into the network;
//! Adam applies the update. Everything is seeded and single-threaded, so a
//! `(dataset, config)` pair maps to exactly one loss history.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{build_network, BlockKind, Network, NetworkGrads};
use crate::resample::{resize_backward, resize_by_scale, Direction, FilterKind, FilterTag};
use crate::tensor::{RationalScale, Shape, Tensor};

/// Hyperparameters for [`train_loop`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scale: RationalScale,
    pub block: BlockKind,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: u64,
    pub crop_base: usize,
    pub seed: u64,
    /// Fixed upsampler the loss reconstructs through.
    pub upsampler: FilterTag,
}

impl TrainConfig {
    /// Defaults everything except the quantities that have no sensible
    /// default: what to train (scale, block) and for how long (iterations,
    /// seed).
    pub fn new(scale: RationalScale, block: BlockKind, iterations: u64, seed: u64) -> Self {
        TrainConfig {
            scale,
            block,
            batch_size: 16,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations,
            crop_base: 256,
            seed,
            upsampler: FilterTag::Bicubic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }

    /// Serializes as `key=value` lines (stable order).
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scale={}", self.scale);
        let _ = writeln!(s, "block={}", self.block);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "crop_base={}", self.crop_base);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "upsampler={}", self.upsampler);
        s
    }

    /// Parses the `key=value` form written by [`TrainConfig::to_kv`].
    /// Unknown keys and malformed values are errors; missing keys keep the
    /// constructor defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::new(
            RationalScale::new(2, 1).expect("2/1 is valid"),
            BlockKind::ConvResize,
            0,
            0,
        );
        let bad = |k: &str, v: &str| Error::InvalidConfig(format!("{k}={v}"));
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("missing '=' in {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "scale" => cfg.scale = v.parse()?,
                "block" => cfg.block = v.parse()?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad(k, v))?,
                "lr" => cfg.lr = v.parse().map_err(|_| bad(k, v))?,
                "beta1" => cfg.beta1 = v.parse().map_err(|_| bad(k, v))?,
                "beta2" => cfg.beta2 = v.parse().map_err(|_| bad(k, v))?,
                "epsilon" => cfg.epsilon = v.parse().map_err(|_| bad(k, v))?,
                "iterations" => cfg.iterations = v.parse().map_err(|_| bad(k, v))?,
                "crop_base" => cfg.crop_base = v.parse().map_err(|_| bad(k, v))?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad(k, v))?,
                "upsampler" => cfg.upsampler = v.parse()?,
                other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Largest training crop not exceeding `base` that downsamples exactly at
/// `scale`: the biggest multiple of `p` that fits, `p·⌊base/p⌋`.
///
/// (Equivalently `M·⌊base/M⌋` whenever that product is an integer; taking
/// multiples of `p` is the rational-arithmetic completion that is *always*
/// integral and always divisible.) `base` must be at least `p`, otherwise no
/// valid crop exists.
pub fn crop_size(scale: RationalScale, base: usize) -> Result<usize> {
    let p = scale.p() as usize;
    if base < p {
        return Err(Error::ScaleTooLarge { p: scale.p(), q: scale.q(), base });
    }
    Ok(p * (base / p))
}

/// MSE loss value together with its gradient.
#[derive(Debug, Clone)]
pub struct LossValue {
    /// Mean of squared residuals, accumulated in `f64`.
    pub value: f64,
    /// Gradient with respect to the reconstruction `x_hat`: `(2/N)(x̂−x)`.
    pub grad: Tensor,
}

/// Mean squared error between a source `x` and reconstruction `x_hat`.
pub fn mse_loss(x: &Tensor, x_hat: &Tensor) -> Result<LossValue> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch(x.shape().to_string(), x_hat.shape().to_string()));
    }
    let n = x.len() as f64;
    let mut acc = 0.0f64;
    for (&a, &b) in x.data().iter().zip(x_hat.data()) {
        let d = (b - a) as f64;
        acc += d * d;
    }
    let scale = (2.0 / n) as f32;
    let grad = x_hat.sub(x)?.scaled(scale);
    Ok(LossValue { value: acc / n, grad })
}

/// First/second moment estimates for one parameter group.
#[derive(Debug, Clone)]
struct MomentPair {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam optimizer state: one moment pair per stage's weights and one per
/// stage's bias, plus the shared timestep.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    slots: Vec<MomentPair>,
}

impl AdamState {
    /// Fresh state shaped like the network's parameters.
    pub fn new(net: &Network) -> Self {
        let mut slots = Vec::with_capacity(net.convs.len() * 2);
        for c in &net.convs {
            slots.push(MomentPair { m: vec![0.0; c.weights.len()], v: vec![0.0; c.weights.len()] });
            slots.push(MomentPair { m: vec![0.0; c.out_ch], v: vec![0.0; c.out_ch] });
        }
        AdamState { t: 0, slots }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update over every parameter:
    /// `m ← β1·m + (1−β1)g`, `v ← β2·v + (1−β2)g²`,
    /// `θ ← θ − lr·m̂/(√v̂ + ε)` with `m̂ = m/(1−β1ᵗ)`, `v̂ = v/(1−β2ᵗ)`.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &NetworkGrads,
        cfg: &TrainConfig,
    ) -> Result<()> {
        if grads.stages.len() != net.convs.len() || self.slots.len() != net.convs.len() * 2 {
            return Err(Error::MismatchedState {
                got: grads.stages.len(),
                want: net.convs.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let lr = cfg.lr as f32;
        let eps = cfg.epsilon as f32;
        let (ibc1, ibc2) = ((1.0 / bc1) as f32, (1.0 / bc2) as f32);

        let update = |params: &mut [f32], grad: &[f32], slot: &mut MomentPair| -> Result<()> {
            if grad.len() != params.len() || slot.m.len() != params.len() {
                return Err(Error::MismatchedState { got: grad.len(), want: params.len() });
            }
            for i in 0..params.len() {
                let g = grad[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
                let m_hat = slot.m[i] * ibc1;
                let v_hat = slot.v[i] * ibc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            Ok(())
        };
        for (i, stage) in grads.stages.iter().enumerate() {
            let (ws, bs) = self.slots.split_at_mut(2 * i + 1);
            update(&mut net.convs[i].weights, &stage.w, &mut ws[2 * i])?;
            update(&mut net.convs[i].bias, &stage.b, &mut bs[0])?;
        }
        Ok(())
    }
}

/// Draws a batch of random square crops (with replacement over images and
/// positions) as one NHWC tensor in `[0, 1]`.
pub fn sample_batch(
    dataset: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("(in-memory image list)".into()));
    }
    let crop = crop_size(cfg.scale, cfg.crop_base)?;
    let mut out = Tensor::zeros(Shape::new(cfg.batch_size, crop, crop, 3));
    let row = crop * 3;
    for b in 0..cfg.batch_size {
        let img = &dataset[rng.gen_range(0..dataset.len())];
        let s = img.shape();
        if s.h < crop || s.w < crop {
            return Err(Error::ImageTooSmall {
                h: s.h,
                w: s.w,
                crop,
                p: cfg.scale.p(),
                q: cfg.scale.q(),
            });
        }
        let y0 = rng.gen_range(0..=s.h - crop);
        let x0 = rng.gen_range(0..=s.w - crop);
        for y in 0..crop {
            let src = img.offset(0, y0 + y, x0, 0);
            let dst = out.offset(b, y, 0, 0);
            out.data_mut()[dst..dst + row].copy_from_slice(&img.data()[src..src + row]);
        }
    }
    Ok(out)
}

/// One recorded loss sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub iteration: u64,
    pub loss: f64,
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<LossSample>,
}

/// Trains a freshly built network on random crops of `dataset`.
///
/// Per iteration: sample a batch, downsample with the network, upsample with
/// the fixed `cfg.upsampler`, take MSE against the source crops, backpropagate
/// (through the upsampler's transpose), and apply one Adam step. The loss is
/// recorded before each update, so `history[0]` is the untrained (fixed
/// bicubic baseline) loss. A checkpoint lands at `ckpt_path` every
/// `report_every` iterations (0 = only at the end) and when training
/// finishes.
pub fn train_loop(
    dataset: &[Tensor],
    cfg: &TrainConfig,
    report_every: u64,
    ckpt_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let crop = crop_size(cfg.scale, cfg.crop_base)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("(in-memory image list)".into()));
    }
    for img in dataset {
        let s = img.shape();
        if s.h < crop || s.w < crop {
            return Err(Error::ImageTooSmall {
                h: s.h,
                w: s.w,
                crop,
                p: cfg.scale.p(),
                q: cfg.scale.q(),
            });
        }
    }

    let mut net = build_network(cfg.scale, cfg.block, cfg.seed)?;
    let mut adam = AdamState::new(&net);
    // Batch sampling draws from its own stream of the seeded generator so
    // adding/removing init-time draws can never shift the data sequence.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let up = FilterKind::new(cfg.upsampler);
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    for iter in 0..cfg.iterations {
        let batch = sample_batch(dataset, cfg, &mut rng)?;
        let down = net.forward(&batch, true)?;
        let up_batch = resize_by_scale(&down, up, cfg.scale, Direction::Up)?;
        let loss = mse_loss(&batch, &up_batch)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFiniteLoss(iter));
        }
        history.push(LossSample { iteration: iter, loss: loss.value });

        let ds = down.shape();
        let grad_down = resize_backward(&loss.grad, up, ds.h, ds.w)?;
        let grads = net.backward(&grad_down)?;
        adam.step(&mut net, &grads, cfg)?;
        net.iterations += 1;

        if let Some(path) = ckpt_path {
            if report_every > 0 && (iter + 1) % report_every == 0 {
                net.save(path)?;
            }
        }
    }
    if let Some(path) = ckpt_path {
        net.save(path)?;
    }
    net.clear_cache();
    Ok(TrainOutcome { network: net, history })
}

/// Writes a loss history as `iteration,loss` CSV. Values use the shortest
/// round-trip float formatting, so identical histories produce identical
/// bytes.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossSample]) -> Result<()> {
    let mut s = String::from("iteration,loss\n");
    for rec in history {
        let _ = writeln!(s, "{},{}", rec.iteration, rec.loss);
    }
    std::fs::write(path, s)?;
    Ok(())
}
