//! `hbc`: encode, decode, train and evaluate the learned B-frame codec.

mod config;

use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hbcodec::codec::{
    decode_sequence, encode_sequence, load_checkpoint, save_checkpoint, Checkpoint, CodingMode, EncodeOptions,
    SequenceBitstream,
};
use hbcodec::entropy::{conformance, serve, CoderId, ExternalCoder, ReferenceCoder, SymbolCoder};
use hbcodec::eval::{
    bd_rate_with, evaluate, plot_rd, target_rate, BdMethod, Curve, LearnedCodec, MetricsFile, RatePoint, TargetOptions,
};
use hbcodec::gop::plan_gop;
use hbcodec::train::{held_out_clips, seeded_clip, Trainer};
use hbcodec::yuv::{read_raw_yuv, read_y4m, write_y4m, Frame420, Y4mHeader};

#[derive(Parser)]
#[command(name = "hbc", version, about = "Learned hierarchical B-frame codec for YUV 4:2:0 video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a Y4M (or raw I420) sequence.
    Encode(EncodeArgs),
    /// Decode a stream to Y4M.
    Decode(DecodeArgs),
    /// Train a checkpoint on synthetic clips.
    Train(TrainArgs),
    /// Measure RD points of a checkpoint on a sequence.
    Eval(EvalArgs),
    /// BD-rate of one metrics file against another.
    Bdrate(BdrateArgs),
    /// Find the rate point closest to a target bitrate.
    TargetRate(TargetArgs),
    /// Draw RD curves from metrics files.
    Plot(PlotArgs),
    /// Print the hierarchical GOP plan.
    Gop(GopArgs),
    /// Write a synthetic test clip.
    Synth(SynthArgs),
    /// Write or check entropy-coder conformance vectors.
    Conformance(ConformanceArgs),
    /// Serve the reference coder over stdin/stdout (one request per run).
    CoderServer,
}

#[derive(Args)]
struct InputArgs {
    /// Y4M file, or raw I420 when `--size` is given.
    #[arg(long, short)]
    input: PathBuf,
    /// Frame size of raw input, WxH.
    #[arg(long)]
    size: Option<String>,
    /// Use at most this many frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct CoderArgs {
    /// Command line of an external coder speaking the stdio protocol.
    /// Streams it writes are marked as native.
    #[arg(long)]
    coder_cmd: Option<String>,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    lambda_index: usize,
    /// Continuous intra rate parameter; defaults to the table combination.
    #[arg(long)]
    intra_lambda: Option<f64>,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    #[arg(long, short)]
    out: PathBuf,
    /// Refuse checkpoints trained for another coding mode.
    #[arg(long)]
    coding_mode: Option<CodingMode>,
    /// Write the GOP plan as JSON.
    #[arg(long)]
    dump_gop: Option<PathBuf>,
    /// Write flow fields of every B frame as planar f32 files.
    #[arg(long)]
    dump_flows: Option<PathBuf>,
    /// Also write the encoder-side reconstruction.
    #[arg(long)]
    recon: Option<PathBuf>,
    #[command(flatten)]
    coder: CoderArgs,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    coding_mode: Option<CodingMode>,
    #[arg(long)]
    dump_gop: Option<PathBuf>,
    #[command(flatten)]
    coder: CoderArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with `[train]` and `[codec]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced single-core preset.
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    coding_mode: Option<CodingMode>,
    /// Disable the pooled-content input of every AF module.
    #[arg(long)]
    no_content_adaptive: bool,
    /// Disable the coding-level input of every AF module.
    #[arg(long)]
    no_coding_level: bool,
    /// Override the whole-GOP step count.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out clips for the before/after validation.
    #[arg(long, default_value_t = 4)]
    val_clips: usize,
    #[arg(long, short)]
    out: PathBuf,
    /// Write the per-step history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Table indices to evaluate; all by default.
    #[arg(long, value_delimiter = ',')]
    lambda_indices: Option<Vec<usize>>,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    /// Sequence name recorded in the metrics.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    coder: CoderArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pchip,
    Cubic,
}

#[derive(Args)]
struct BdrateArgs {
    anchor: PathBuf,
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Pchip)]
    method: Method,
}

#[derive(Args)]
struct TargetArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bpp: f64,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    #[arg(long, default_value_t = 8)]
    max_probes: usize,
    /// Write the result with its probe trace as JSON.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    coder: CoderArgs,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics files, one curve each.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Index of the anchor curve in the list.
    #[arg(long, default_value_t = 0)]
    anchor: usize,
}

#[derive(Args)]
struct GopArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ConformanceArgs {
    /// Write freshly generated vectors here.
    #[arg(long, conflicts_with = "check")]
    write: Option<PathBuf>,
    /// Check a coder against a vector file.
    #[arg(long)]
    check: Option<PathBuf>,
    #[command(flatten)]
    coder: CoderArgs,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bdrate(a) => bdrate(a),
        Command::TargetRate(a) => target(a),
        Command::Plot(a) => plot(a),
        Command::Gop(a) => {
            let plan = plan_gop(a.frames, a.intra_period)?;
            println!("{}", plan.to_json());
            Ok(())
        }
        Command::Synth(a) => synth(a),
        Command::Conformance(a) => conformance_cmd(a),
        Command::CoderServer => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(&ReferenceCoder, stdin.lock(), stdout.lock())?;
            Ok(())
        }
    }
}

fn coder(args: &CoderArgs) -> Result<Box<dyn SymbolCoder>> {
    match &args.coder_cmd {
        None => Ok(Box::new(ReferenceCoder)),
        Some(cmd) => {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts.next().context("empty --coder-cmd")?;
            Ok(Box::new(ExternalCoder::new(program, parts.collect(), CoderId::Native)))
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once(['x', 'X']).with_context(|| format!("size '{s}' is not WxH"))?;
    Ok((w.parse()?, h.parse()?))
}

fn read_frames(a: &InputArgs) -> Result<(Y4mHeader, Vec<Frame420>)> {
    let (header, mut frames) = match &a.size {
        Some(s) => {
            let (w, h) = parse_size(s)?;
            let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            (Y4mHeader::new(w, h, (25, 1)), read_raw_yuv(&bytes, w, h, None)?)
        }
        None => {
            let f = std::fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
            read_y4m(BufReader::new(f)).with_context(|| format!("parsing {}", a.input.display()))?
        }
    };
    if let Some(n) = a.frames {
        frames.truncate(n);
    }
    if frames.is_empty() {
        bail!("{} contains no frames", a.input.display());
    }
    Ok((header, frames))
}

fn write_frames(path: &Path, w: usize, h: usize, frames: &[Frame420]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_y4m(&mut out, &Y4mHeader::new(w, h, (25, 1)), frames)?;
    out.flush()?;
    Ok(())
}

fn open_checkpoint(path: &Path, mode: Option<CodingMode>) -> Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let trained = ck.model.coding_mode();
    if let Some(m) = mode {
        if m != trained {
            bail!("checkpoint {} was trained for coding mode {trained}, not {m}", path.display());
        }
    }
    Ok(ck)
}

fn encode(a: EncodeArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint, a.coding_mode)?;
    let (header, frames) = read_frames(&a.input)?;
    let coder = coder(&a.coder)?;
    let opts = EncodeOptions {
        lambda_index: a.lambda_index,
        intra_lambda: a.intra_lambda,
        intra_period: a.intra_period,
        dump_flows: a.dump_flows.clone(),
    };
    let enc = encode_sequence(&ck, &frames, &opts, coder.as_ref())?;
    std::fs::write(&a.out, &enc.bytes).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.dump_gop {
        std::fs::write(p, enc.plan.to_json())?;
    }
    if let Some(p) = &a.recon {
        write_frames(p, header.width, header.height, &enc.reconstructions)?;
    }
    let bpp = enc.bytes.len() as f64 * 8.0 / (header.width * header.height * frames.len()) as f64;
    println!(
        "{} frames, {} bytes, {bpp:.4} bpp, coding order {:?}",
        frames.len(),
        enc.bytes.len(),
        enc.plan.coding_order()
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint, a.coding_mode)?;
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let stream = SequenceBitstream::from_bytes(&bytes)?;
    if stream.coder_id == CoderId::Native && a.coder.coder_cmd.is_none() {
        bail!("{} was coded with a native coder; pass --coder-cmd", a.input.display());
    }
    if let Some(p) = &a.dump_gop {
        std::fs::write(p, plan_gop(stream.frame_count, stream.intra_period)?.to_json())?;
    }
    let coder = coder(&a.coder)?;
    let frames = decode_sequence(&ck, &bytes, coder.as_ref())?;
    write_frames(&a.out, stream.width, stream.height, &frames)?;
    println!("{} frames decoded to {}", frames.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut file = match &a.config {
        Some(p) => config::load(p)?,
        None if a.toy => config::ConfigFile::toy(),
        None => config::ConfigFile::default(),
    };
    if let Some(m) = a.coding_mode {
        file.codec.coding_mode = m;
    }
    if a.no_content_adaptive {
        file.codec.af.content_adaptive = false;
    }
    if a.no_coding_level {
        file.codec.af.coding_level = false;
    }
    if let Some(s) = a.steps {
        file.train.steps = s;
    }
    if let Some(s) = a.seed {
        file.train.seed = s;
    }
    file.codec.validate()?;
    let model = hbcodec::codec::Model::new(file.codec.clone(), file.train.seed)?;
    log::info!(
        "training {} model, {} parameters, AF {:?}",
        model.coding_mode(),
        model.store.num_parameters(),
        file.codec.af
    );
    let cfg = file.train.clone();
    let val = held_out_clips(&cfg.synth, cfg.crop, a.val_clips, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg)?;
    let start = std::time::Instant::now();
    let before = trainer.validate(&val)?;
    trainer.run()?;
    let after = trainer.validate(&val)?;
    log::info!(
        "validation loss {:.5} -> {:.5} in {:.0} s",
        before.loss,
        after.loss,
        start.elapsed().as_secs_f64()
    );
    if let Some(p) = &a.history {
        std::fs::write(p, serde_json::to_string(&trainer.history)?)?;
    }
    let extra = serde_json::json!({
        "validation_before": before,
        "validation_after": after,
        "seconds": start.elapsed().as_secs_f64(),
    });
    let ck = trainer.into_checkpoint(extra)?;
    save_checkpoint(&ck, &a.out)?;
    println!("checkpoint {} written to {}", ck.hash_hex(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint, None)?;
    let (_, frames) = read_frames(&a.input)?;
    let coder = coder(&a.coder)?;
    let codec = LearnedCodec {
        checkpoint: &ck,
        coder: coder.as_ref(),
    };
    let indices = a
        .lambda_indices
        .clone()
        .unwrap_or_else(|| (0..ck.model.config.lambda_table.len()).collect());
    let mut points = Vec::new();
    for i in indices {
        let p = evaluate(
            &codec,
            &frames,
            &RatePoint {
                lambda_index: i,
                intra_lambda: None,
                intra_period: a.intra_period,
            },
        )?;
        println!("lambda {:>6}: {:.4} bpp, PSNR-YUV {:.3} dB", p.lambda, p.bpp, p.psnr_yuv);
        points.push(p);
    }
    let name = a.name.clone().unwrap_or_else(|| a.input.input.display().to_string());
    MetricsFile::new(codec_name(&ck), name, points).save(&a.out)?;
    Ok(())
}

fn codec_name(ck: &Checkpoint) -> String {
    format!("hbc-{}", ck.model.coding_mode())
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let anchor = MetricsFile::load(&a.anchor)?;
    let test = MetricsFile::load(&a.test)?;
    let method = match a.method {
        Method::Pchip => BdMethod::Pchip,
        Method::Cubic => BdMethod::Cubic,
    };
    let bd = bd_rate_with(&anchor.rate_psnr(), &test.rate_psnr(), method)?;
    println!("BD-rate of {} against {}: {bd:+.2} %", test.codec, anchor.codec);
    Ok(())
}

fn target(a: TargetArgs) -> Result<()> {
    let ck = open_checkpoint(&a.checkpoint, None)?;
    let (_, frames) = read_frames(&a.input)?;
    let coder = coder(&a.coder)?;
    let codec = LearnedCodec {
        checkpoint: &ck,
        coder: coder.as_ref(),
    };
    let opts = TargetOptions {
        tolerance: a.tolerance,
        max_probes: a.max_probes,
        intra_period: a.intra_period,
        ..TargetOptions::default()
    };
    let r = target_rate(&codec, &frames, a.bpp, &opts)?;
    for p in &r.probes {
        println!("probe index {} intra lambda {:.2}: {:.4} bpp", p.lambda_index, p.intra_lambda, p.bpp);
    }
    println!(
        "{} after {} probes: index {} intra lambda {:.2}, {:.4} bpp, PSNR-YUV {:.3} dB",
        if r.converged { "converged" } else { "not converged" },
        r.probes.len(),
        r.point.lambda_index,
        r.point.intra_lambda,
        r.point.bpp,
        r.point.psnr_yuv
    );
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&r)?)?;
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let curves = a
        .metrics
        .iter()
        .map(|p| {
            let m = MetricsFile::load(p)?;
            Ok(Curve {
                name: format!("{} ({})", m.codec, m.sequence),
                points: m.points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = plot_rd(&curves, &a.out, a.anchor)?;
    print!("{}", summary.table());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = hbcodec::train::SynthConfig {
        frames: a.frames,
        ..Default::default()
    };
    let clip = seeded_clip(&cfg, (a.width, a.height), a.seed)?;
    write_frames(&a.out, a.width, a.height, &clip)?;
    Ok(())
}

fn conformance_cmd(a: ConformanceArgs) -> Result<()> {
    if let Some(p) = &a.write {
        std::fs::write(p, serde_json::to_string_pretty(&conformance::generate())?)?;
        return Ok(());
    }
    let Some(p) = &a.check else {
        bail!("usage: conformance needs --write or --check");
    };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let file: conformance::ConformanceFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    let coder = coder(&a.coder)?;
    let reports = conformance::check(coder.as_ref(), &file)?;
    let mut ok = true;
    for r in &reports {
        println!("{:<32} bytes {} decode {}", r.name, mark(r.bytes_match), mark(r.decodes));
        ok &= r.bytes_match && r.decodes;
    }
    if !ok {
        bail!("coder does not conform");
    }
    Ok(())
}

fn mark(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("64x32").unwrap(), (64, 32));
        assert!(parse_size("64").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn gop_plan_validates() {
        assert!(hbcodec::gop::validate(&plan_gop(5, 4).unwrap()).is_empty());
    }
}
