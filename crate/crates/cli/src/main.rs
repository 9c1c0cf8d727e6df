//! Command-line frontend for the fractional downsampling toolkit: train a
//! learned downsampler, resize images and clips, run evaluation ladders,
//! and compare rate-quality curves.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use convresize::harness::{
    run_ladder, CodecCommands, CommandTemplate, Downsampler, LadderConfig,
};
use convresize::media::{
    load_image_rgb, read_raw_yuv, read_y4m, rgb_to_yuv420, save_image_rgb, write_raw_yuv,
    write_y4m, yuv420_to_rgb, Y4mVideo,
};
use convresize::metrics::{bd_rate_with, read_curve_csv, BdFit, MetricTag, RateQualityCurve};
use convresize::nn::{BlockKind, Network};
use convresize::resample::{resize_by_scale, Direction, FilterKind, FilterTag};
use convresize::tensor::{RationalScale, Shape, Tensor};
use convresize::train::{train_loop, write_loss_csv, TrainConfig};

#[derive(Parser)]
#[command(
    name = "convresize",
    version,
    about = "Fractional video downsampling: learned conv-resize downsamplers, \
             rational resampling filters, encode ladders, and BD-rate reports"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    Train(TrainArgs),
    Resize(ResizeArgs),
    Eval(EvalArgs),
    Ladder(LadderArgs),
    Bdrate(BdrateArgs),
    CompareOrder(CompareOrderArgs),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Resize(a) => cmd_resize(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ladder(a) => cmd_ladder(a),
        Cmd::Bdrate(a) => cmd_bdrate(a),
        Cmd::CompareOrder(a) => cmd_compare_order(a),
    }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// `--method`/`--downsampler` value: a fixed filter or a trained checkpoint.
#[derive(Debug, Clone)]
enum Method {
    Filter(FilterKind),
    Checkpoint(PathBuf),
}

impl FromStr for Method {
    type Err = convresize::Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("ckpt:") {
            return Ok(Method::Checkpoint(PathBuf::from(path)));
        }
        Ok(Method::Filter(FilterKind::new(s.parse::<FilterTag>()?)))
    }
}

/// Loads every `.png` in `dir`, sorted by filename so runs are reproducible.
fn load_dataset(dir: &Path) -> Result<Vec<Tensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading training directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .png files in {}", dir.display());
    }
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(load_image_rgb(p).with_context(|| format!("loading {}", p.display()))?);
    }
    info!("loaded {} training images from {}", images.len(), dir.display());
    Ok(images)
}

fn parse_fps(s: &str) -> std::result::Result<(u32, u32), String> {
    let (num, den) = s.split_once('/').unwrap_or((s, "1"));
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("invalid fps {s:?}"));
    let fps = (parse(num)?, parse(den)?);
    if fps.0 == 0 || fps.1 == 0 {
        return Err(format!("fps must be positive, got {s:?}"));
    }
    Ok(fps)
}

fn lowercase_extension(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Train a downsampling network on a directory of PNG images.
#[derive(Args)]
struct TrainArgs {
    /// Downscale factor, e.g. 3/2, 2, or 2.5
    #[arg(long)]
    scale: RationalScale,
    /// First-stage block kind
    #[arg(long, default_value_t = BlockKind::ConvResize)]
    block: BlockKind,
    /// Directory of training PNGs
    #[arg(long)]
    data: PathBuf,
    /// Number of Adam iterations
    #[arg(long)]
    iters: u64,
    /// Seed for weight init and batch sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Crops per Adam step
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Source crop size before rounding down to a multiple of the scale
    /// numerator
    #[arg(long, default_value_t = 256)]
    crop_base: usize,
    /// Also save the checkpoint every N iterations (0 = only at the end)
    #[arg(long, default_value_t = 0)]
    save_every: u64,
    /// Write the per-iteration loss history to this CSV
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let mut cfg = TrainConfig::new(args.scale, args.block, args.iters, args.seed);
    cfg.batch_size = args.batch_size;
    cfg.lr = args.lr;
    cfg.crop_base = args.crop_base;

    info!(
        "training {} at {} for {} iterations (batch {}, lr {})",
        args.block, args.scale, args.iters, args.batch_size, args.lr
    );
    let out = train_loop(&dataset, &cfg, args.save_every, Some(&args.out))?;
    if let Some(path) = &args.loss_csv {
        write_loss_csv(path, &out.history)?;
        info!("loss history written to {}", path.display());
    }
    let first = out.history.first().map_or(0.0, |s| s.loss);
    let last = out.history.last().map_or(0.0, |s| s.loss);
    println!(
        "trained {} parameters: loss {:.6e} -> {:.6e} over {} iterations",
        out.network.parameter_count(),
        first,
        last,
        args.iters
    );
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// resize
// ---------------------------------------------------------------------------

/// Resize a PNG image, Y4M clip, or raw YUV420 file.
#[derive(Args)]
struct ResizeArgs {
    /// Input file: .png, .y4m, or .yuv (raw YUV420 needs --width/--height)
    #[arg(long = "in")]
    input: PathBuf,
    /// Rational factor, e.g. 3/2; optional when the method is a checkpoint
    /// (the checkpoint carries its factor)
    #[arg(long)]
    scale: Option<RationalScale>,
    /// lanczos | bicubic | bilinear | ckpt:PATH
    #[arg(long)]
    method: Method,
    /// down shrinks by scale, up enlarges by it
    #[arg(long)]
    direction: Direction,
    /// Output file: .png (image input only), .y4m, or .yuv
    #[arg(long)]
    out: PathBuf,
    /// Frame width of raw .yuv input
    #[arg(long)]
    width: Option<usize>,
    /// Frame height of raw .yuv input
    #[arg(long)]
    height: Option<usize>,
    /// Frame rate used when the output is .y4m and the input carried none
    #[arg(long, default_value = "25/1", value_parser = parse_fps)]
    fps: (u32, u32),
}

/// The per-frame resize operation, with the checkpoint loaded once.
enum Resizer {
    Filter(FilterKind, RationalScale, Direction),
    Network(Box<Network>),
}

impl Resizer {
    fn build(method: &Method, scale: Option<RationalScale>, direction: Direction) -> Result<Self> {
        match method {
            Method::Filter(k) => {
                let scale =
                    scale.context("--scale is required when the method is a fixed filter")?;
                Ok(Resizer::Filter(*k, scale, direction))
            }
            Method::Checkpoint(path) => {
                if direction == Direction::Up {
                    bail!("checkpoints only downsample; use a filter for --direction up");
                }
                let net = Network::load(path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?;
                if let Some(s) = scale {
                    if s != net.scale {
                        bail!("--scale {s} disagrees with the checkpoint's factor {}", net.scale);
                    }
                }
                info!("checkpoint downsamples at {}", net.scale);
                Ok(Resizer::Network(Box::new(net)))
            }
        }
    }

    fn scale(&self) -> RationalScale {
        match self {
            Resizer::Filter(_, s, _) => *s,
            Resizer::Network(net) => net.scale,
        }
    }

    /// Length unit the *input* must be a multiple of. `even_output` is the
    /// 4:2:0 constraint of YUV outputs.
    fn crop_unit(&self, even_output: bool) -> usize {
        let s = self.scale();
        let (p, q) = (s.p() as usize, s.q() as usize);
        match self {
            Resizer::Filter(_, _, Direction::Up) => {
                if !even_output || p % 2 == 0 {
                    q
                } else {
                    2 * q
                }
            }
            _ => {
                if !even_output || q % 2 == 0 {
                    p
                } else {
                    2 * p
                }
            }
        }
    }

    fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Resizer::Filter(k, s, d) => Ok(resize_by_scale(x, *k, *s, *d)?),
            Resizer::Network(net) => Ok(net.forward(x, false)?),
        }
    }
}

/// Top-left crop to `h`×`w`, warning when pixels are dropped.
fn crop_top_left(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    if (s.h, s.w) == (h, w) {
        return x.clone();
    }
    warn!("cropping {}x{} input to {w}x{h} to make the factor exact", s.w, s.h);
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

fn cropped_len(len: usize, unit: usize) -> Result<usize> {
    let c = unit * (len / unit);
    if c == 0 {
        bail!("dimension {len} is smaller than the required unit {unit}");
    }
    Ok(c)
}

fn cmd_resize(args: ResizeArgs) -> Result<()> {
    let mut resizer = Resizer::build(&args.method, args.scale, args.direction)?;
    let in_ext = lowercase_extension(&args.input);
    let out_ext = lowercase_extension(&args.out);

    if in_ext == "png" {
        if out_ext != "png" {
            bail!("image input writes an image; expected a .png output path");
        }
        let img = load_image_rgb(&args.input)?;
        let s = img.shape();
        let unit = resizer.crop_unit(false);
        let img = crop_top_left(&img, cropped_len(s.h, unit)?, cropped_len(s.w, unit)?);
        let out = resizer.apply(&img)?;
        save_image_rgb(&args.out, &out)?;
        let os = out.shape();
        println!("{} -> {} ({}x{})", args.input.display(), args.out.display(), os.w, os.h);
        return Ok(());
    }

    // Clip path: read frames, resize each, write frames.
    let video = match in_ext.as_str() {
        "y4m" => read_y4m(&args.input)?,
        "yuv" => {
            let (w, h) = match (args.width, args.height) {
                (Some(w), Some(h)) => (w, h),
                _ => bail!("raw .yuv input needs --width and --height"),
            };
            Y4mVideo { fps: args.fps, frames: read_raw_yuv(&args.input, w, h)? }
        }
        other => bail!("unsupported input extension {other:?} (png, y4m, yuv)"),
    };
    let first = video.frames.first().context("input clip has no frames")?;
    let unit = resizer.crop_unit(true);
    let crop_h = cropped_len(first.height(), unit)?;
    let crop_w = cropped_len(first.width(), unit)?;

    let mut out_frames = Vec::with_capacity(video.frames.len());
    for frame in &video.frames {
        let rgb = yuv420_to_rgb(frame)?;
        let rgb = crop_top_left(&rgb, crop_h, crop_w);
        out_frames.push(rgb_to_yuv420(&resizer.apply(&rgb)?)?);
    }
    let out_video = Y4mVideo { fps: video.fps, frames: out_frames };
    let (ow, oh) = (out_video.frames[0].width(), out_video.frames[0].height());
    match out_ext.as_str() {
        "y4m" => write_y4m(&args.out, &out_video)?,
        "yuv" => write_raw_yuv(&args.out, &out_video.frames)?,
        other => bail!("unsupported output extension {other:?} for clip input (y4m, yuv)"),
    }
    println!(
        "{} -> {} ({} frames, {}x{})",
        args.input.display(),
        args.out.display(),
        out_video.frames.len(),
        ow,
        oh
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Score a downsampler on a clip without an encoder and write its curve CSV.
#[derive(Args)]
struct EvalArgs {
    /// Source clip (.y4m)
    #[arg(long)]
    src: PathBuf,
    /// Checkpoint to evaluate
    #[arg(long, required_unless_present = "method", conflicts_with = "method")]
    ckpt: Option<PathBuf>,
    /// Evaluate a fixed filter instead of a checkpoint (needs --scale)
    #[arg(long)]
    method: Option<Method>,
    /// Downscale factor when --method is a filter
    #[arg(long)]
    scale: Option<RationalScale>,
    /// Filter that brings frames back to source resolution
    #[arg(long, default_value_t = FilterTag::Bicubic)]
    upsampler: FilterTag,
    /// Comma-separated metric list
    #[arg(long, value_delimiter = ',', default_values_t = [MetricTag::Psnr, MetricTag::Ssim])]
    metrics: Vec<MetricTag>,
    /// Where the curve CSV goes
    #[arg(long)]
    out: PathBuf,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let video = read_y4m(&args.src)?;
    let method = match (&args.ckpt, &args.method) {
        (Some(path), None) => Method::Checkpoint(path.clone()),
        (None, Some(m)) => m.clone(),
        _ => bail!("pass exactly one of --ckpt and --method"),
    };
    let (mut down, scale) = match &method {
        Method::Checkpoint(path) => {
            let net = Network::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            let scale = net.scale;
            if let Some(s) = args.scale {
                if s != scale {
                    bail!("--scale {s} disagrees with the checkpoint's factor {scale}");
                }
            }
            (Downsampler::Network(Box::new(net)), scale)
        }
        Method::Filter(k) => {
            let scale = args.scale.context("--method with a filter needs --scale")?;
            (Downsampler::Filter(*k), scale)
        }
    };

    let mut cfg = LadderConfig::new(vec![scale]);
    cfg.upsampler = FilterKind::new(args.upsampler);
    cfg.metrics = args.metrics;

    let work_dir = args.out.parent().filter(|p| !p.as_os_str().is_empty());
    let work_dir = work_dir.unwrap_or_else(|| Path::new("."));
    let curves = run_ladder(&video, &mut down, &cfg, work_dir)?;
    let curve = &curves[0];
    if curve.csv_path != args.out {
        fs::rename(&curve.csv_path, &args.out)
            .with_context(|| format!("moving curve CSV to {}", args.out.display()))?;
    }
    let row = &curve.rows[0];
    println!(
        "{} at {}: bitrate {:.2} kbps, psnr {:.3} dB, ssim {:.5}{}",
        down.label(),
        scale,
        row.bitrate_kbps,
        row.psnr,
        row.ssim,
        if curve.flat_quality { " (no encoder: one quality level)" } else { "" }
    );
    println!("curve written to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ladder
// ---------------------------------------------------------------------------

/// Run the full QP ladder through an external encoder/decoder pair.
#[derive(Args)]
struct LadderArgs {
    /// Source clip (.y4m)
    #[arg(long)]
    src: PathBuf,
    /// Encoder command with {input} {output} {qp} {width} {height}
    /// placeholders; omit together with --decoder-cmd for the no-encoder mode
    #[arg(long, requires = "decoder_cmd")]
    encoder_cmd: Option<CommandTemplate>,
    /// Decoder command with {input} {output} placeholders
    #[arg(long, requires = "encoder_cmd")]
    decoder_cmd: Option<CommandTemplate>,
    /// Comma-separated QP list (default: the 15-point ladder 17..46)
    #[arg(long = "qps", value_delimiter = ',')]
    qps: Vec<u32>,
    /// Downscale factor; repeat the flag for several rungs
    #[arg(long = "scale", required = true)]
    scales: Vec<RationalScale>,
    /// What shrinks the frames: lanczos | bicubic | bilinear | ckpt:PATH
    #[arg(long, default_value = "lanczos")]
    downsampler: Method,
    /// Filter that brings decoded frames back to source resolution
    #[arg(long, default_value_t = FilterTag::Bicubic)]
    upsampler: FilterTag,
    /// CSV of externally computed VMAF scores, `qp,score` per line
    #[arg(long)]
    vmaf_csv: Option<PathBuf>,
    /// Directory for curves, intermediate Y4M files, and bitstreams
    #[arg(long)]
    out: PathBuf,
}

fn read_vmaf_csv(path: &Path) -> Result<HashMap<u32, f64>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scores = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((qp, score)) = line.split_once(',') else {
            bail!("{}:{}: expected `qp,score`", path.display(), i + 1);
        };
        match (qp.trim().parse::<u32>(), score.trim().parse::<f64>()) {
            (Ok(qp), Ok(score)) => {
                scores.insert(qp, score);
            }
            _ if i == 0 => continue, // header row
            _ => bail!("{}:{}: expected `qp,score`, got {line:?}", path.display(), i + 1),
        }
    }
    if scores.is_empty() {
        bail!("{} holds no usable `qp,score` rows", path.display());
    }
    Ok(scores)
}

fn cmd_ladder(args: LadderArgs) -> Result<()> {
    let video = read_y4m(&args.src)?;
    let mut down = match &args.downsampler {
        Method::Filter(k) => Downsampler::Filter(*k),
        Method::Checkpoint(path) => Downsampler::Network(Box::new(
            Network::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?,
        )),
    };

    let mut cfg = LadderConfig::new(args.scales);
    if !args.qps.is_empty() {
        cfg.qp_list = args.qps;
    }
    cfg.codec = match (args.encoder_cmd, args.decoder_cmd) {
        (Some(encoder), Some(decoder)) => Some(CodecCommands { encoder, decoder }),
        _ => {
            info!("no encoder given: measuring raw downsampled size at a single quality level");
            None
        }
    };
    cfg.upsampler = FilterKind::new(args.upsampler);
    if let Some(path) = &args.vmaf_csv {
        let scores = read_vmaf_csv(path)?;
        if !cfg.metrics.contains(&MetricTag::VmafExternal) {
            cfg.metrics.push(MetricTag::VmafExternal);
        }
        cfg.vmaf_by_qp = Some(scores);
    }

    let curves = run_ladder(&video, &mut down, &cfg, &args.out)?;
    for curve in &curves {
        println!(
            "scale {}: {} points{} -> {}",
            curve.scale,
            curve.rows.len(),
            if curve.flat_quality { " (flat quality: no rate-distortion tradeoff)" } else { "" },
            curve.csv_path.display()
        );
        for row in &curve.rows {
            println!(
                "  qp {:>2}: {:>10.2} kbps  psnr {:>7.3}  ssim {:.5}{}",
                row.qp,
                row.bitrate_kbps,
                row.psnr,
                row.ssim,
                row.vmaf.map_or(String::new(), |v| format!("  vmaf {v:.2}")),
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bdrate
// ---------------------------------------------------------------------------

/// BD-rate of a test curve against a baseline curve.
#[derive(Args)]
struct BdrateArgs {
    /// Baseline curve CSV (as written by eval/ladder)
    #[arg(long)]
    baseline: PathBuf,
    /// Test curve CSV
    #[arg(long)]
    test: PathBuf,
    /// Quality metric the integration runs over
    #[arg(long, default_value_t = MetricTag::Psnr)]
    metric: MetricTag,
    /// Interpolation through the curve points
    #[arg(long, default_value_t = BdFit::Pchip)]
    fit: BdFit,
}

fn cmd_bdrate(args: BdrateArgs) -> Result<()> {
    let load = |path: &Path| -> Result<RateQualityCurve> {
        let rows = read_curve_csv(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(RateQualityCurve::from_rows(&rows, args.metric)?)
    };
    let baseline = load(&args.baseline)?;
    let test = load(&args.test)?;
    let bd = bd_rate_with(&baseline, &test, args.fit)?;
    println!(
        "BD-rate ({}, {} fit): {bd:+.4}% (negative = test saves bitrate at equal quality)",
        args.metric, args.fit
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compare-order
// ---------------------------------------------------------------------------

/// Train conv-first and resize-first blocks under one config and compare.
#[derive(Args)]
struct CompareOrderArgs {
    /// Downscale factor, e.g. 5/2
    #[arg(long)]
    scale: RationalScale,
    /// Directory of training PNGs
    #[arg(long)]
    data: PathBuf,
    /// Number of Adam iterations per arm
    #[arg(long)]
    iters: u64,
    /// Seed shared by both arms
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crops per Adam step
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Source crop size before rounding down to a multiple of the scale
    /// numerator
    #[arg(long, default_value_t = 256)]
    crop_base: usize,
    /// Write both arms' loss histories as CSVs into this directory
    #[arg(long)]
    loss_dir: Option<PathBuf>,
}

fn cmd_compare_order(args: CompareOrderArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let mut cfg = TrainConfig::new(args.scale, BlockKind::ConvResize, args.iters, args.seed);
    cfg.batch_size = args.batch_size;
    cfg.crop_base = args.crop_base;

    info!("training both block orders at {} for {} iterations each", args.scale, args.iters);
    let cmp = convresize::harness::compare_order(&dataset, &cfg)?;
    if let Some(dir) = &args.loss_dir {
        fs::create_dir_all(dir)?;
        for arm in [&cmp.conv_first, &cmp.resize_first] {
            let path = dir.join(format!("loss_{}.csv", arm.kind));
            write_loss_csv(&path, &arm.history)?;
            info!("{} loss history written to {}", arm.kind, path.display());
        }
    }
    println!("{cmp}");
    Ok(())
}
