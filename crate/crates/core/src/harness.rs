//! The evaluation pipeline: downsample a video with a chosen method,
//! optionally push it through an external encoder/decoder pair at a sweep of
//! QPs, upsample the result, score it against the source, and assemble the
//! points into rate-quality curves. On top of that sit the BD-rate report
//! (test curves against a baseline, per scale and metric) and the block-order
//! study that trains the conv-first and resize-first variants side by side.
//!
//! External processes are invoked without a shell from whitespace-tokenized
//! command templates; every invocation's command line, exit status, and
//! stderr are logged via the `log` facade, and a failing QP point aborts its
//! curve rather than leaving a silent gap.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::media::{rgb_to_yuv420, write_y4m, yuv420_to_rgb, read_y4m, FramePlanar420, Y4mVideo};
use crate::metrics::{
    bd_rate_with, psnr, ssim, write_curve_csv, BdFit, CurveRow, MetricTag, RateQualityCurve,
};
use crate::nn::{BlockKind, Network};
use crate::resample::{resize_by_scale, resize_forward, Direction, FilterKind};
use crate::tensor::{RationalScale, Shape, Tensor};
use crate::train::{mse_loss, sample_batch, train_loop, LossSample, TrainConfig};

/// Fifteen QPs spread over [17, 46]: an even spacing, rounded to integers.
pub const DEFAULT_QP_LADDER: [u32; 15] =
    [17, 19, 21, 23, 25, 27, 29, 32, 34, 36, 38, 40, 42, 44, 46];

/// Per-frame PSNR is capped here when a frame reconstructs exactly, so curve
/// CSVs stay finite.
const PSNR_CAP_DB: f64 = 99.0;

// ---------------------------------------------------------------------------
// Command templates
// ---------------------------------------------------------------------------

/// An external command with `{input}`, `{output}`, `{qp}`, `{width}`,
/// `{height}` placeholders. The template is split on whitespace once at parse
/// time and placeholders are substituted per token, so substituted values are
/// never re-tokenized and no shell is involved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTemplate {
    raw: String,
    tokens: Vec<String>,
}

impl CommandTemplate {
    pub fn parse(raw: &str) -> Result<Self> {
        let tokens: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyCommand(raw.to_string()));
        }
        Ok(CommandTemplate { raw: raw.to_string(), tokens })
    }

    /// The template as given.
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Substitutes placeholders inside every token.
    fn render(&self, vars: &[(&str, String)]) -> Vec<String> {
        self.tokens
            .iter()
            .map(|tok| {
                let mut t = tok.clone();
                for (key, value) in vars {
                    t = t.replace(&format!("{{{key}}}"), value);
                }
                t
            })
            .collect()
    }
}

impl FromStr for CommandTemplate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CommandTemplate::parse(s)
    }
}

/// Encoder/decoder template pair for the external-codec path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecCommands {
    pub encoder: CommandTemplate,
    pub decoder: CommandTemplate,
}

enum CodecRole {
    Encoder,
    Decoder,
}

fn run_command(template: &CommandTemplate, vars: &[(&str, String)], role: CodecRole) -> Result<()> {
    let args = template.render(vars);
    log::info!("running: {}", args.join(" "));
    let output = Command::new(&args[0]).args(&args[1..]).output()?;
    let status = output.status.code().unwrap_or(-1);
    let stderr = String::from_utf8_lossy(&output.stderr).trim().to_string();
    log::info!("exit status {status}");
    if !stderr.is_empty() {
        log::info!("stderr: {stderr}");
    }
    if !output.status.success() {
        return Err(match role {
            CodecRole::Encoder => Error::EncoderFailure { status, stderr },
            CodecRole::Decoder => Error::DecoderFailure { status, stderr },
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ladder configuration and results
// ---------------------------------------------------------------------------

/// Settings for [`run_ladder`].
#[derive(Debug, Clone)]
pub struct LadderConfig {
    /// Downscale factors to evaluate (all ≥ 1).
    pub scales: Vec<RationalScale>,
    /// QPs to sweep, strictly increasing.
    pub qp_list: Vec<u32>,
    /// External encoder/decoder pair; `None` selects the no-encoder mode,
    /// which treats the downsampled frames as both "bitstream" (raw size)
    /// and decoder output.
    pub codec: Option<CodecCommands>,
    /// Fixed filter that brings decoded frames back to source resolution.
    pub upsampler: FilterKind,
    /// Metrics reported by [`report_bdrate`]; curves always carry PSNR and
    /// SSIM, with VMAF joined from `vmaf_by_qp` when present.
    pub metrics: Vec<MetricTag>,
    /// Externally computed VMAF scores keyed by QP.
    pub vmaf_by_qp: Option<HashMap<u32, f64>>,
}

impl LadderConfig {
    pub fn new(scales: Vec<RationalScale>) -> Self {
        LadderConfig {
            scales,
            qp_list: DEFAULT_QP_LADDER.to_vec(),
            codec: None,
            upsampler: FilterKind::bicubic(),
            metrics: vec![MetricTag::Psnr, MetricTag::Ssim],
            vmaf_by_qp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidConfig("ladder needs at least one scale".into()));
        }
        for s in &self.scales {
            if s.p() < s.q() {
                return Err(Error::InvalidConfig(format!(
                    "ladder scales must be ≥ 1, got {s}"
                )));
            }
        }
        if self.qp_list.is_empty() {
            return Err(Error::InvalidConfig("qp list is empty".into()));
        }
        if self.qp_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("qp list must be strictly increasing".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("no metrics selected".into()));
        }
        Ok(())
    }
}

/// One encode/decode round at a single QP.
#[derive(Debug, Clone)]
pub struct EncodeResult {
    pub qp: u32,
    pub bitstream_bytes: u64,
    pub duration_s: f64,
    /// Decoder output; `None` in no-encoder mode, where frames never touch
    /// disk.
    pub decoded_path: Option<PathBuf>,
}

impl EncodeResult {
    /// `8 · bytes / duration / 1000`, in kilobits per second.
    pub fn bitrate_kbps(&self) -> f64 {
        8.0 * self.bitstream_bytes as f64 / self.duration_s / 1000.0
    }
}

/// What shrinks the video: a fixed filter or a trained network checkpoint.
#[derive(Debug)]
pub enum Downsampler {
    Filter(FilterKind),
    Network(Box<Network>),
}

impl Downsampler {
    /// Short name used in file names and reports.
    pub fn label(&self) -> String {
        match self {
            Downsampler::Filter(k) => k.tag.to_string(),
            Downsampler::Network(_) => "network".to_string(),
        }
    }

    fn down(&mut self, x: &Tensor, scale: RationalScale) -> Result<Tensor> {
        match self {
            Downsampler::Filter(k) => resize_by_scale(x, *k, scale, Direction::Down),
            Downsampler::Network(net) => {
                if net.scale != scale {
                    return Err(Error::Harness(format!(
                        "checkpoint downsamples at {}, the ladder requested {scale}",
                        net.scale
                    )));
                }
                net.forward(x, false)
            }
        }
    }
}

/// One assembled rate-quality curve with its provenance.
#[derive(Debug, Clone)]
pub struct LadderCurve {
    pub scale: RationalScale,
    pub rows: Vec<CurveRow>,
    /// True when every QP produced the same quality — the telltale of the
    /// no-encoder mode, where there is no rate-distortion tradeoff.
    pub flat_quality: bool,
    /// Where the curve CSV was written.
    pub csv_path: PathBuf,
}

// ---------------------------------------------------------------------------
// The ladder itself
// ---------------------------------------------------------------------------

/// Largest length ≤ `len` that downsamples exactly at `scale` *and* leaves
/// the downsampled length even (4:2:0 conversion needs even dims).
pub fn ladder_crop_len(len: usize, scale: RationalScale) -> Result<usize> {
    // Multiples of p downsample exactly to k·q; k must be even when q is odd.
    let unit = if scale.q() % 2 == 0 { scale.p() as usize } else { 2 * scale.p() as usize };
    let cropped = unit * (len / unit);
    if cropped == 0 {
        return Err(Error::Harness(format!(
            "dimension {len} too small for scale {scale} (needs at least {unit})"
        )));
    }
    Ok(cropped)
}

fn crop_top_left(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    if (s.h, s.w) == (h, w) {
        return x.clone();
    }
    let mut out = Tensor::zeros(Shape::new(s.n, h, w, s.c));
    let row = w * s.c;
    for n in 0..s.n {
        for y in 0..h {
            let src = x.offset(n, y, 0, 0);
            let dst = out.offset(n, y, 0, 0);
            out.data_mut()[dst..dst + row].copy_from_slice(&x.data()[src..src + row]);
        }
    }
    out
}

/// Mean per-frame PSNR/SSIM of decoded frames, upsampled back to the source
/// crop, against the source frames. Individual infinite PSNR frames are
/// capped at 99 dB so aggregates stay finite.
fn score_frames(
    source: &[Tensor],
    decoded: &[FramePlanar420],
    upsampler: FilterKind,
    out_h: usize,
    out_w: usize,
) -> Result<(f64, f64)> {
    if source.len() != decoded.len() {
        return Err(Error::Harness(format!(
            "decoder returned {} frames, source has {}",
            decoded.len(),
            source.len()
        )));
    }
    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    for (src, frame) in source.iter().zip(decoded) {
        let rgb = yuv420_to_rgb(frame)?;
        let up = resize_forward(&rgb, upsampler, out_h, out_w)?;
        psnr_acc += psnr(src, &up, 1.0)?.min(PSNR_CAP_DB);
        ssim_acc += ssim(src, &up)?;
    }
    let n = source.len() as f64;
    Ok((psnr_acc / n, ssim_acc / n))
}

/// Runs the full evaluation ladder: for every scale, downsample, (optionally)
/// encode and decode externally at every QP, upsample, and score. One curve
/// per scale is returned and written as CSV into `work_dir`, named
/// `curve_<downsampler>_<p>_<q>.csv`. Intermediate Y4M/bitstream files land
/// in `work_dir` too.
pub fn run_ladder(
    video: &Y4mVideo,
    down: &mut Downsampler,
    cfg: &LadderConfig,
    work_dir: impl AsRef<Path>,
) -> Result<Vec<LadderCurve>> {
    cfg.validate()?;
    let work_dir = work_dir.as_ref();
    std::fs::create_dir_all(work_dir)?;
    let first = video
        .frames
        .first()
        .ok_or_else(|| Error::Harness("video has no frames".into()))?;
    let (src_w, src_h) = (first.width(), first.height());
    for f in &video.frames {
        if (f.width(), f.height()) != (src_w, src_h) {
            return Err(Error::ShapeMismatch(
                format!("{src_w}x{src_h}"),
                format!("{}x{}", f.width(), f.height()),
            ));
        }
    }
    let duration = video.duration_seconds();
    let src_rgb: Vec<Tensor> = video.frames.iter().map(yuv420_to_rgb).collect::<Result<_>>()?;

    let mut curves = Vec::with_capacity(cfg.scales.len());
    for &scale in &cfg.scales {
        let crop_h = ladder_crop_len(src_h, scale)?;
        let crop_w = ladder_crop_len(src_w, scale)?;
        let cropped: Vec<Tensor> =
            src_rgb.iter().map(|t| crop_top_left(t, crop_h, crop_w)).collect();
        let down_rgb: Vec<Tensor> =
            cropped.iter().map(|t| down.down(t, scale)).collect::<Result<_>>()?;
        let ds = down_rgb[0].shape();
        let down_frames: Vec<FramePlanar420> =
            down_rgb.iter().map(rgb_to_yuv420).collect::<Result<_>>()?;
        let down_video = Y4mVideo { fps: video.fps, frames: down_frames };

        let vmaf_of = |qp: u32| cfg.vmaf_by_qp.as_ref().and_then(|m| m.get(&qp).copied());
        let mut rows = Vec::with_capacity(cfg.qp_list.len());
        match &cfg.codec {
            None => {
                // Identity "encoder": raw frame bytes as the bitstream, the
                // downsampled frames as the decoder output. Every QP yields
                // the same point.
                let raw_bytes: u64 =
                    down_video.frames.iter().map(|f| f.byte_len() as u64).sum();
                let enc = EncodeResult {
                    qp: cfg.qp_list[0],
                    bitstream_bytes: raw_bytes,
                    duration_s: duration,
                    decoded_path: None,
                };
                let (p, s) =
                    score_frames(&cropped, &down_video.frames, cfg.upsampler, crop_h, crop_w)?;
                for &qp in &cfg.qp_list {
                    rows.push(CurveRow {
                        qp,
                        bitrate_kbps: enc.bitrate_kbps(),
                        psnr: p,
                        ssim: s,
                        vmaf: vmaf_of(qp),
                    });
                }
            }
            Some(codec) => {
                let stem = format!("{}_{}_{}", down.label(), scale.p(), scale.q());
                let down_path = work_dir.join(format!("down_{stem}.y4m"));
                write_y4m(&down_path, &down_video)?;
                for &qp in &cfg.qp_list {
                    let bitstream = work_dir.join(format!("bitstream_{stem}_qp{qp}.bin"));
                    let decoded = work_dir.join(format!("decoded_{stem}_qp{qp}.y4m"));
                    let dims = [
                        ("qp", qp.to_string()),
                        ("width", ds.w.to_string()),
                        ("height", ds.h.to_string()),
                    ];
                    let mut enc_vars = vec![
                        ("input", down_path.display().to_string()),
                        ("output", bitstream.display().to_string()),
                    ];
                    enc_vars.extend(dims.iter().cloned());
                    run_command(&codec.encoder, &enc_vars, CodecRole::Encoder)?;
                    let bitstream_bytes = std::fs::metadata(&bitstream)?.len();
                    if bitstream_bytes == 0 {
                        return Err(Error::Harness(format!(
                            "encoder produced an empty bitstream at qp {qp}"
                        )));
                    }
                    let mut dec_vars = vec![
                        ("input", bitstream.display().to_string()),
                        ("output", decoded.display().to_string()),
                    ];
                    dec_vars.extend(dims.iter().cloned());
                    run_command(&codec.decoder, &dec_vars, CodecRole::Decoder)?;
                    let dec_video = read_y4m(&decoded)?;
                    let enc = EncodeResult {
                        qp,
                        bitstream_bytes,
                        duration_s: duration,
                        decoded_path: Some(decoded.clone()),
                    };
                    let (p, s) = score_frames(
                        &cropped,
                        &dec_video.frames,
                        cfg.upsampler,
                        crop_h,
                        crop_w,
                    )?;
                    rows.push(CurveRow {
                        qp,
                        bitrate_kbps: enc.bitrate_kbps(),
                        psnr: p,
                        ssim: s,
                        vmaf: vmaf_of(qp),
                    });
                }
            }
        }

        let flat_quality = rows
            .windows(2)
            .all(|w| w[0].psnr == w[1].psnr && w[0].ssim == w[1].ssim);
        if flat_quality {
            log::warn!(
                "curve at scale {scale} is flat across QPs (no rate-distortion tradeoff); \
                 this is expected in no-encoder mode"
            );
        }
        let csv_path =
            work_dir.join(format!("curve_{}_{}_{}.csv", down.label(), scale.p(), scale.q()));
        write_curve_csv(&csv_path, &rows)?;
        curves.push(LadderCurve { scale, rows, flat_quality, csv_path });
    }
    Ok(curves)
}

// ---------------------------------------------------------------------------
// BD-rate report
// ---------------------------------------------------------------------------

/// One cell of the BD-rate table.
#[derive(Debug, Clone, Copy)]
pub struct BdRow {
    pub scale: RationalScale,
    pub metric: MetricTag,
    pub bd_percent: f64,
}

/// BD-rates of a test downsampler against a baseline, per scale and metric.
#[derive(Debug, Clone)]
pub struct BdReport {
    pub fit: BdFit,
    pub rows: Vec<BdRow>,
}

impl BdReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scale,metric,bd_rate_percent\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.4}", r.scale, r.metric, r.bd_percent);
        }
        s
    }
}

impl fmt::Display for BdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:<6} {:>12}", "scale", "metric", "bd-rate %")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:<6} {:>12.4}",
                r.scale.to_string(),
                r.metric.to_string(),
                r.bd_percent
            )?;
        }
        write!(f, "(fit: {}; negative = test saves bitrate)", self.fit)
    }
}

/// Computes BD-rate per (scale, metric) of `test` curves against `baseline`
/// curves. The two sets must cover the same scales in the same order.
pub fn report_bdrate(
    baseline: &[LadderCurve],
    test: &[LadderCurve],
    metrics: &[MetricTag],
    fit: BdFit,
) -> Result<BdReport> {
    if baseline.len() != test.len() {
        return Err(Error::CurveMismatch(format!(
            "baseline has {} scales, test has {}",
            baseline.len(),
            test.len()
        )));
    }
    let mut rows = Vec::new();
    for (b, t) in baseline.iter().zip(test) {
        if b.scale != t.scale {
            return Err(Error::CurveMismatch(format!(
                "scale {} in baseline vs {} in test",
                b.scale, t.scale
            )));
        }
        for &metric in metrics {
            let cb = RateQualityCurve::from_rows(&b.rows, metric)?;
            let ct = RateQualityCurve::from_rows(&t.rows, metric)?;
            rows.push(BdRow { scale: b.scale, metric, bd_percent: bd_rate_with(&cb, &ct, fit)? });
        }
    }
    Ok(BdReport { fit, rows })
}

// ---------------------------------------------------------------------------
// Block-order study
// ---------------------------------------------------------------------------

/// One side of the order comparison.
#[derive(Debug)]
pub struct OrderArm {
    pub kind: BlockKind,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub history: Vec<LossSample>,
    pub network: Network,
}

/// Conv-first vs resize-first, trained under one config.
#[derive(Debug)]
pub struct OrderComparison {
    pub conv_first: OrderArm,
    pub resize_first: OrderArm,
}

/// Why the ordering matters: with the convolution first, the filters run at
/// full input resolution and see every source pixel before anything is
/// discarded, so the network decides what survives the shrink. With the
/// resize first, the fixed resampler throws detail away up front and the
/// filters can only rework what it kept. Conv-first is therefore expected to
/// reach the lower reconstruction loss.
pub const ORDER_RATIONALE: &str = "With the convolution placed before the resize, the filters \
run at full input resolution and see every source pixel before anything is discarded, so the \
network decides what survives the shrink. With the resize first, the fixed resampler throws \
detail away up front and the filters can only rework what it kept. Conv-first is therefore \
expected to reach the lower reconstruction loss.";

impl OrderComparison {
    /// True when the conv-first arm's final training loss is no worse.
    pub fn conv_first_wins(&self) -> bool {
        self.conv_first.final_loss <= self.resize_first.final_loss
    }
}

impl fmt::Display for OrderComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>14} {:>14} {:>9}", "block", "initial loss", "final loss", "Δ%")?;
        for arm in [&self.conv_first, &self.resize_first] {
            let delta = if arm.initial_loss > 0.0 {
                100.0 * (arm.final_loss - arm.initial_loss) / arm.initial_loss
            } else {
                0.0
            };
            writeln!(
                f,
                "{:<14} {:>14.6e} {:>14.6e} {:>8.2}%",
                arm.kind.to_string(),
                arm.initial_loss,
                arm.final_loss,
                delta
            )?;
        }
        writeln!(
            f,
            "winner: {}",
            if self.conv_first_wins() { self.conv_first.kind } else { self.resize_first.kind }
        )?;
        write!(f, "{ORDER_RATIONALE}")
    }
}

fn order_arm_from_training(
    dataset: &[Tensor],
    cfg: &TrainConfig,
    kind: BlockKind,
) -> Result<OrderArm> {
    let mut cfg = cfg.clone();
    cfg.block = kind;
    let out = train_loop(dataset, &cfg, 0, None)?;
    let initial_loss = out.history.first().map_or(0.0, |r| r.loss);
    let final_loss = out.history.last().map_or(initial_loss, |r| r.loss);
    Ok(OrderArm { kind, initial_loss, final_loss, history: out.history, network: out.network })
}

/// Trains the conv-first and resize-first variants under the same config
/// (same scale, seed, data order, and iteration count) and reports both.
pub fn compare_order(dataset: &[Tensor], cfg: &TrainConfig) -> Result<OrderComparison> {
    cfg.validate()?;
    Ok(OrderComparison {
        conv_first: order_arm_from_training(dataset, cfg, BlockKind::ConvResize)?,
        resize_first: order_arm_from_training(dataset, cfg, BlockKind::ResizeConv)?,
    })
}

/// Compares two already-trained checkpoints on one held batch instead of
/// training. The pair must be one conv-first and one resize-first network
/// with identical scale, seed, and iteration count (the order study's
/// everything-equal-but-the-block protocol).
pub fn compare_order_pretrained(
    mut conv_first: Network,
    mut resize_first: Network,
    dataset: &[Tensor],
    cfg: &TrainConfig,
) -> Result<OrderComparison> {
    cfg.validate()?;
    if conv_first.kind != BlockKind::ConvResize || resize_first.kind != BlockKind::ResizeConv {
        return Err(Error::InvalidConfig(format!(
            "order comparison needs a {} and a {} checkpoint, got {} and {}",
            BlockKind::ConvResize,
            BlockKind::ResizeConv,
            conv_first.kind,
            resize_first.kind
        )));
    }
    if conv_first.scale != resize_first.scale
        || conv_first.seed != resize_first.seed
        || conv_first.iterations != resize_first.iterations
    {
        return Err(Error::InvalidConfig(format!(
            "checkpoints differ beyond the block kind: scale {} vs {}, seed {} vs {}, \
             iterations {} vs {}",
            conv_first.scale,
            resize_first.scale,
            conv_first.seed,
            resize_first.seed,
            conv_first.iterations,
            resize_first.iterations
        )));
    }
    let mut cfg = cfg.clone();
    cfg.scale = conv_first.scale;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let batch = sample_batch(dataset, &cfg, &mut rng)?;
    let up_filter = FilterKind::new(cfg.upsampler);
    let eval = |net: &mut Network| -> Result<f64> {
        let down = net.forward(&batch, false)?;
        let up = resize_by_scale(&down, up_filter, cfg.scale, Direction::Up)?;
        Ok(mse_loss(&batch, &up)?.value)
    };
    let conv_loss = eval(&mut conv_first)?;
    let resize_loss = eval(&mut resize_first)?;
    Ok(OrderComparison {
        conv_first: OrderArm {
            kind: BlockKind::ConvResize,
            initial_loss: conv_loss,
            final_loss: conv_loss,
            history: Vec::new(),
            network: conv_first,
        },
        resize_first: OrderArm {
            kind: BlockKind::ResizeConv,
            initial_loss: resize_loss,
            final_loss: resize_loss,
            history: Vec::new(),
            network: resize_first,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::PixelRange;
    use crate::nn::build_network;

    fn scale(p: u32, q: u32) -> RationalScale {
        RationalScale::new(p, q).unwrap()
    }

    /// A small textured test clip (converted from an RGB pattern so the
    /// frames are realistic limited-range 4:2:0).
    fn test_video(frames: usize, h: usize, w: usize) -> Y4mVideo {
        let mk = |t: usize| {
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let v = ((x * 7 + y * 13 + t * 29) % 97) as f32 / 96.0;
                    let u = ((x * 3 + y * 5 + t * 11) % 53) as f32 / 52.0;
                    data.extend([v, 1.0 - v, u]);
                }
            }
            let rgb = Tensor::from_vec(Shape::new(1, h, w, 3), data).unwrap();
            rgb_to_yuv420(&rgb).unwrap()
        };
        Y4mVideo { fps: (25, 1), frames: (0..frames).map(mk).collect() }
    }

    #[test]
    fn command_template_substitutes_per_token() {
        let t = CommandTemplate::parse("enc -q {qp} --size {width}x{height} -o={output} {input}")
            .unwrap();
        let args = t.render(&[
            ("input", "in.y4m".into()),
            ("output", "out.bin".into()),
            ("qp", "32".into()),
            ("width", "64".into()),
            ("height", "36".into()),
        ]);
        assert_eq!(args, ["enc", "-q", "32", "--size", "64x36", "-o=out.bin", "in.y4m"]);
        assert!(matches!(
            CommandTemplate::parse("   "),
            Err(Error::EmptyCommand(_))
        ));
    }

    #[test]
    fn default_qp_ladder_spans_17_to_46_with_15_points() {
        assert_eq!(DEFAULT_QP_LADDER.len(), 15);
        assert_eq!(DEFAULT_QP_LADDER[0], 17);
        assert_eq!(DEFAULT_QP_LADDER[14], 46);
        assert!(DEFAULT_QP_LADDER.windows(2).all(|w| w[1] > w[0]));
        let cfg = LadderConfig::new(vec![scale(2, 1)]);
        assert_eq!(cfg.qp_list, DEFAULT_QP_LADDER);
        cfg.validate().unwrap();
    }

    #[test]
    fn ladder_config_rejects_bad_settings() {
        let mut cfg = LadderConfig::new(vec![scale(1, 2)]);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.scales = vec![scale(2, 1)];
        cfg.qp_list = vec![20, 20, 25];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.qp_list = vec![20, 25];
        cfg.metrics.clear();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn ladder_crop_respects_divisibility_and_even_output() {
        // q even: any multiple of p works (down length k·q is even).
        assert_eq!(ladder_crop_len(1080, scale(3, 2)).unwrap(), 1080);
        assert_eq!(ladder_crop_len(16, scale(3, 2)).unwrap(), 15);
        // q odd: the multiple must itself be even.
        assert_eq!(ladder_crop_len(17, scale(2, 1)).unwrap(), 16);
        assert_eq!(ladder_crop_len(18, scale(2, 1)).unwrap(), 16);
        assert_eq!(ladder_crop_len(30, scale(3, 1)).unwrap(), 30);
        assert!(matches!(ladder_crop_len(2, scale(3, 2)), Err(Error::Harness(_))));
        for (p, q, len) in [(3, 2, 100), (2, 1, 77), (5, 2, 64), (3, 1, 50)] {
            let c = ladder_crop_len(len, scale(p, q)).unwrap();
            let down = scale(p, q).down_len(c).unwrap();
            assert_eq!(down % 2, 0, "{p}/{q} on {len}: down {down}");
        }
    }

    #[test]
    fn no_encoder_ladder_is_flat_deterministic_and_sized_right() {
        let dir = tempfile::tempdir().unwrap();
        let video = test_video(3, 24, 32);
        let mut cfg = LadderConfig::new(vec![scale(2, 1)]);
        cfg.qp_list = vec![20, 30, 40];
        let mut down = Downsampler::Filter(FilterKind::lanczos3());

        let curves = run_ladder(&video, &mut down, &cfg, dir.path().join("a")).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert_eq!(c.rows.len(), 3);
        assert!(c.flat_quality);
        // identity "encoder" reports raw downsampled bytes over the duration
        let raw = 3.0 * (12.0 * 16.0 * 1.5);
        let want_kbps = 8.0 * raw / (3.0 / 25.0) / 1000.0;
        for row in &c.rows {
            assert!((row.bitrate_kbps - want_kbps).abs() < 1e-9);
            assert_eq!(row.psnr, c.rows[0].psnr);
            assert_eq!(row.ssim, c.rows[0].ssim);
            assert!(row.psnr.is_finite() && row.ssim.is_finite());
            assert!(row.vmaf.is_none());
        }

        let again = run_ladder(&video, &mut down, &cfg, dir.path().join("b")).unwrap();
        assert_eq!(
            std::fs::read(&c.csv_path).unwrap(),
            std::fs::read(&again[0].csv_path).unwrap(),
            "no-encoder CSV must be byte-identical across runs"
        );
    }

    #[test]
    fn fresh_network_ladder_matches_plain_bicubic_ladder() {
        let dir = tempfile::tempdir().unwrap();
        let video = test_video(2, 24, 24);
        let mut cfg = LadderConfig::new(vec![scale(2, 1)]);
        cfg.qp_list = vec![20, 30];
        let net = build_network(scale(2, 1), BlockKind::ConvResize, 44).unwrap();
        let mut a = Downsampler::Network(Box::new(net));
        let mut b = Downsampler::Filter(FilterKind::bicubic());
        let ca = run_ladder(&video, &mut a, &cfg, dir.path().join("net")).unwrap();
        let cb = run_ladder(&video, &mut b, &cfg, dir.path().join("bic")).unwrap();
        assert_eq!(ca[0].rows, cb[0].rows);
    }

    #[test]
    fn network_downsampler_rejects_foreign_scales() {
        let net = build_network(scale(3, 2), BlockKind::ConvResize, 1).unwrap();
        let mut d = Downsampler::Network(Box::new(net));
        let x = Tensor::zeros(Shape::new(1, 8, 8, 3));
        assert!(matches!(d.down(&x, scale(2, 1)), Err(Error::Harness(_))));
    }

    #[test]
    fn external_copy_codec_reproduces_no_encoder_quality() {
        let dir = tempfile::tempdir().unwrap();
        let video = test_video(2, 24, 32);
        let mut base = LadderConfig::new(vec![scale(2, 1)]);
        base.qp_list = vec![25, 35];
        let mut with_codec = base.clone();
        with_codec.codec = Some(CodecCommands {
            encoder: CommandTemplate::parse("cp {input} {output}").unwrap(),
            decoder: CommandTemplate::parse("cp {input} {output}").unwrap(),
        });
        let mut vmaf = HashMap::new();
        vmaf.insert(25, 91.5);
        with_codec.vmaf_by_qp = Some(vmaf);

        let mut down = Downsampler::Filter(FilterKind::lanczos3());
        let plain = run_ladder(&video, &mut down, &base, dir.path().join("plain")).unwrap();
        let coded = run_ladder(&video, &mut down, &with_codec, dir.path().join("coded")).unwrap();
        for (a, b) in plain[0].rows.iter().zip(&coded[0].rows) {
            assert_eq!(a.psnr, b.psnr);
            assert_eq!(a.ssim, b.ssim);
            // bitstream here is the Y4M file, slightly larger than raw planes
            assert!(b.bitrate_kbps > a.bitrate_kbps);
        }
        assert_eq!(coded[0].rows[0].vmaf, Some(91.5));
        assert_eq!(coded[0].rows[1].vmaf, None);
        // intermediate artifacts are kept for inspection
        assert!(dir.path().join("coded").join("down_lanczos3_2_1.y4m").exists());
    }

    #[test]
    fn failing_encoder_aborts_with_status_and_stderr() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("fail_enc.sh");
        std::fs::write(&script, "#!/bin/sh\necho boom >&2\nexit 3\n").unwrap();
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();

        let video = test_video(1, 8, 8);
        let mut cfg = LadderConfig::new(vec![scale(2, 1)]);
        cfg.qp_list = vec![20];
        cfg.codec = Some(CodecCommands {
            encoder: CommandTemplate::parse(&format!("{} {{input}} {{output}}", script.display()))
                .unwrap(),
            decoder: CommandTemplate::parse("cp {input} {output}").unwrap(),
        });
        let mut down = Downsampler::Filter(FilterKind::bicubic());
        match run_ladder(&video, &mut down, &cfg, dir.path().join("w")) {
            Err(Error::EncoderFailure { status, stderr }) => {
                assert_eq!(status, 3);
                assert_eq!(stderr, "boom");
            }
            other => panic!("expected EncoderFailure, got {other:?}"),
        }
    }

    fn synthetic_curve(scale_: RationalScale, factor: f64) -> LadderCurve {
        let rows = [17u32, 23, 29, 35, 41]
            .iter()
            .enumerate()
            .map(|(i, &qp)| CurveRow {
                qp,
                bitrate_kbps: factor * 4000.0 / (1 << i) as f64,
                psnr: 44.0 - 3.0 * i as f64,
                ssim: 0.99 - 0.03 * i as f64,
                vmaf: None,
            })
            .collect();
        LadderCurve { scale: scale_, rows, flat_quality: false, csv_path: PathBuf::new() }
    }

    #[test]
    fn bdrate_report_zero_against_itself_and_offsets_scale() {
        let base = vec![synthetic_curve(scale(2, 1), 1.0), synthetic_curve(scale(3, 2), 1.0)];
        let report = report_bdrate(&base, &base, &[MetricTag::Psnr, MetricTag::Ssim], BdFit::Pchip)
            .unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.bd_percent.abs() < 1e-9));

        let cheaper = vec![synthetic_curve(scale(2, 1), 0.9), synthetic_curve(scale(3, 2), 0.9)];
        let report = report_bdrate(&base, &cheaper, &[MetricTag::Psnr], BdFit::Pchip).unwrap();
        for r in &report.rows {
            assert!((r.bd_percent + 10.0).abs() < 0.1, "{}", r.bd_percent);
        }
        let text = report.to_string();
        assert!(text.contains("psnr") && text.contains("2/1") && text.contains("3/2"));
        let csv = report.to_csv();
        assert!(csv.starts_with("scale,metric,bd_rate_percent\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn bdrate_report_requires_matching_scales() {
        let a = vec![synthetic_curve(scale(2, 1), 1.0)];
        let b = vec![synthetic_curve(scale(3, 2), 1.0)];
        assert!(matches!(
            report_bdrate(&a, &b, &[MetricTag::Psnr], BdFit::Pchip),
            Err(Error::CurveMismatch(_))
        ));
        let c = vec![synthetic_curve(scale(2, 1), 1.0), synthetic_curve(scale(3, 2), 1.0)];
        assert!(matches!(
            report_bdrate(&a, &c, &[MetricTag::Psnr], BdFit::Pchip),
            Err(Error::CurveMismatch(_))
        ));
    }

    fn tiny_dataset() -> Vec<Tensor> {
        let mut data = Vec::new();
        for i in 0..10 * 10 * 3 {
            data.push(((i as f32 * 0.61).sin() * 0.5 + 0.5).clamp(0.0, 1.0));
        }
        vec![Tensor::from_vec(Shape::new(1, 10, 10, 3), data).unwrap()]
    }

    #[test]
    fn compare_order_trains_both_variants_under_one_config() {
        let mut cfg = TrainConfig::new(scale(5, 2), BlockKind::ConvResize, 3, 7);
        cfg.batch_size = 2;
        cfg.crop_base = 10;
        let cmp = compare_order(&tiny_dataset(), &cfg).unwrap();
        assert_eq!(cmp.conv_first.kind, BlockKind::ConvResize);
        assert_eq!(cmp.resize_first.kind, BlockKind::ResizeConv);
        assert_eq!(cmp.conv_first.history.len(), 3);
        assert_eq!(cmp.resize_first.history.len(), 3);
        // same seed ⇒ both arms start from the same bicubic baseline loss
        assert!(
            (cmp.conv_first.initial_loss - cmp.resize_first.initial_loss).abs()
                <= 1e-12 * cmp.conv_first.initial_loss.max(1e-12)
        );
        let text = cmp.to_string();
        assert!(text.contains("conv-resize") && text.contains("resize-conv"));
        assert!(text.contains("full input resolution"));
    }

    #[test]
    fn pretrained_comparison_degenerates_for_fresh_pairs() {
        // Fresh networks of either kind reduce to the bicubic skip, so an
        // untrained pair must report identical losses.
        let mut cfg = TrainConfig::new(scale(5, 2), BlockKind::ConvResize, 0, 3);
        cfg.batch_size = 2;
        cfg.crop_base = 10;
        let a = build_network(scale(5, 2), BlockKind::ConvResize, 3).unwrap();
        let b = build_network(scale(5, 2), BlockKind::ResizeConv, 3).unwrap();
        let cmp = compare_order_pretrained(a, b, &tiny_dataset(), &cfg).unwrap();
        assert_eq!(cmp.conv_first.final_loss, cmp.resize_first.final_loss);
        assert!(cmp.conv_first_wins());
    }

    #[test]
    fn pretrained_comparison_rejects_mismatched_pairs() {
        let cfg = TrainConfig::new(scale(5, 2), BlockKind::ConvResize, 0, 3);
        let conv = build_network(scale(5, 2), BlockKind::ConvResize, 3).unwrap();
        let also_conv = build_network(scale(5, 2), BlockKind::ConvResize, 3).unwrap();
        assert!(matches!(
            compare_order_pretrained(conv, also_conv, &tiny_dataset(), &cfg),
            Err(Error::InvalidConfig(_))
        ));
        let conv = build_network(scale(5, 2), BlockKind::ConvResize, 3).unwrap();
        let other_seed = build_network(scale(5, 2), BlockKind::ResizeConv, 4).unwrap();
        assert!(matches!(
            compare_order_pretrained(conv, other_seed, &tiny_dataset(), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn video_conversion_assumptions_hold() {
        // The harness decodes at limited range by default; spot-check that
        // the test clip really is limited range.
        let v = test_video(1, 8, 8);
        assert!(v.frames[0].y().iter().all(|&y| (16..=235).contains(&y)));
        let rgb = crate::media::yuv420_to_rgb_in(&v.frames[0], PixelRange::Limited).unwrap();
        assert!(rgb.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
