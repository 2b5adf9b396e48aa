//! The `mspc` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{self, ModelHash};
use crate::codec::container::Container;
use crate::codec::report::{per_32x32, Citation, GROUPING_REFERENCE, RATE_REFERENCE, TIMING_REFERENCE};
use crate::codec::{Codec, EncodeOptions};
use crate::grouping::{GroupingMethod, SubsetPhase};
use crate::net::{ModelWeights, NetConfig, Profile};
use crate::train::{self, Dataset, EvalReport, TrainConfig, TrainOutputs};
use crate::{Error, Image8};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const DEFAULT_CUSTOM_PATCH: usize = 496;

#[derive(Parser, Debug)]
#[command(name = "mspc", version, about = "Lossless RGB image codec with a learned multi-scale model")]
pub struct Cli {
    /// Print one JSON object instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for patch and image parallelism.
    #[arg(long, global = true, env = "MSPC_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compress an image into a container.
    Encode(EncodeArgs),
    /// Restore an image from a container.
    Decode(DecodeArgs),
    /// Train a model on a directory of images.
    Train(TrainArgs),
    /// Report bpp of a model on a directory of images.
    Eval(EvalArgs),
    /// Time encoding and decoding per 32x32 pixels.
    Bench(BenchArgs),
    /// Dump a container's header and patch table.
    Inspect(InspectArgs),
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileName {
    Normal,
    Big,
    Extra,
    /// Whatever configuration the checkpoint holds.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    Odd,
    Even,
}

#[derive(Args, Debug, Clone)]
pub struct CodingArgs {
    #[arg(long, value_parser = parse_grouping)]
    pub grouping: Option<GroupingMethod>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Groups per scale for random and dynamic grouping.
    #[arg(long, default_value_t = 3)]
    pub groups: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Which cell of each 2x2 block forms the next coarser scale.
    #[arg(long, value_enum, default_value_t = Phase::Odd)]
    pub phase: Phase,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub profile: ProfileName,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output image; `.ppm` writes PPM, anything else PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of PNG/PPM images.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub profile: ProfileName,
    /// Starting checkpoint; a seeded initialization when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Best-validation checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV log (epoch,train_bpp,val_bpp,lr).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub groups: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub profile: ProfileName,
    /// Evaluate every grouping method side by side.
    #[arg(long)]
    pub compare_groupings: bool,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// An image or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub profile: ProfileName,
    /// Timed runs after one warmup.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub coding: CodingArgs,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub file: PathBuf,
    /// Compare the container's model hash with this checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(long, value_enum)]
    pub profile: ProfileName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long)]
    pub resblocks: Option<usize>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long, value_parser = parse_grouping)]
    pub grouping: Option<GroupingMethod>,
    /// One set of weights for every scale.
    #[arg(long)]
    pub share_weights: bool,
}

fn parse_grouping(s: &str) -> Result<GroupingMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut (dyn Write + Send) = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

/// Entry point of the binary.
pub fn main() -> ! {
    let code = run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code)
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn execute(cli: &Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Outcome {
    let pool = match cli.threads {
        Some(0) => return Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Encode(a) => encode(a, cli.json, out),
        Command::Decode(a) => decode(a, cli.json, out),
        Command::Train(a) => train_cmd(a, cli.json, out),
        Command::Eval(a) => eval(a, cli.json, out),
        Command::Bench(a) => bench(a, cli.json, out, err),
        Command::Inspect(a) => inspect(a, cli.json, out),
        Command::Init(a) => init(a, cli.json, out),
    })
}

fn emit(out: &mut (dyn Write + Send), text: &str) -> Outcome {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Data(Error::io("<stdout>", e)))
}

fn emit_json(out: &mut (dyn Write + Send), value: serde_json::Value) -> Outcome {
    emit(out, &format!("{value}\n"))
}

fn load_model(path: &Path) -> std::result::Result<(ModelWeights, ModelHash), Failure> {
    if !path.exists() {
        return Err(Failure::Data(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found"),
        )));
    }
    Ok(checkpoint::load(path)?)
}

fn preset(name: ProfileName) -> Option<Profile> {
    match name {
        ProfileName::Normal => Some(Profile::normal()),
        ProfileName::Big => Some(Profile::big()),
        ProfileName::Extra => Some(Profile::extra()),
        ProfileName::Custom => None,
    }
}

/// The profile to code with; presets must match the checkpoint.
pub fn resolve_profile(name: ProfileName, config: &NetConfig, patch: Option<usize>) -> crate::Result<Profile> {
    let profile = match preset(name) {
        Some(p) => p,
        None => {
            let mut p = Profile::for_config(config, patch.unwrap_or(DEFAULT_CUSTOM_PATCH));
            if p.id != crate::net::CUSTOM_PROFILE_ID {
                p.grouping = config.grouping;
            }
            p
        }
    };
    profile.check(config)?;
    Ok(profile)
}

fn coding_options(profile: Profile, coding: &CodingArgs) -> EncodeOptions {
    let mut opts = EncodeOptions::new(profile);
    if let Some(g) = coding.grouping {
        opts.grouping = g;
    }
    if let Some(p) = coding.patch {
        opts.patch = p;
    }
    opts.groups = coding.groups;
    opts.seed = coding.seed;
    opts.phase = match coding.phase {
        Phase::Odd => SubsetPhase::OddOdd,
        Phase::Even => SubsetPhase::EvenEven,
    };
    opts
}

fn write_file(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode(a: &EncodeArgs, as_json: bool, out: &mut (dyn Write + Send)) -> Outcome {
    let (model, hash) = load_model(&a.model)?;
    let profile = resolve_profile(a.profile, &model.config, a.coding.patch)?;
    let img = Image8::load(&a.input)?;
    let opts = coding_options(profile, &a.coding);
    let codec = Codec::with_hash(&model, hash);
    let start = Instant::now();
    let enc = codec.encode(&img, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    write_file(&a.out, &enc.bytes)?;
    let r = &enc.report;
    if as_json {
        return emit_json(
            out,
            json!({
                "command": "encode",
                "input": a.input,
                "out": a.out,
                "profile": opts.profile.name,
                "grouping": opts.grouping.name(),
                "seconds": seconds,
                "report": r.summary_json(),
            }),
        );
    }
    let mut s = String::new();
    let _ = writeln!(s, "{} -> {} ({} bytes)", a.input.display(), a.out.display(), r.file_bytes);
    let _ = writeln!(s, "profile {} grouping {}", opts.profile.name, opts.grouping);
    let _ = writeln!(s, "bpp {:.4}  bits/subpixel {:.4}  cross-entropy {:.4} bpp", r.bpp(), r.bits_per_subpixel(), r.cross_entropy_bpp());
    let _ = writeln!(s, "wall time {seconds:.3} s");
    for (level, bits) in r.level_bits() {
        let _ = writeln!(s, "  scale {}: {:.1} bits ({:.4} bpp)", level - 1, bits, bits / r.pixels() as f64);
    }
    let _ = writeln!(s, "  coarsest (raw): {} bits", 8 * r.raw_bytes());
    emit(out, &s)
}

fn decode(a: &DecodeArgs, as_json: bool, out: &mut (dyn Write + Send)) -> Outcome {
    let (model, hash) = load_model(&a.model)?;
    let bytes = std::fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let codec = Codec::with_hash(&model, hash);
    let start = Instant::now();
    let img = codec.decode(&bytes)?;
    let seconds = start.elapsed().as_secs_f64();
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        img.save_ppm(&a.out)?;
    } else {
        img.save_png(&a.out)?;
    }
    if as_json {
        return emit_json(
            out,
            json!({
                "command": "decode",
                "input": a.input,
                "out": a.out,
                "width": img.width(),
                "height": img.height(),
                "seconds": seconds,
            }),
        );
    }
    emit(
        out,
        &format!(
            "{} -> {} ({}x{})\nwall time {seconds:.3} s\n",
            a.input.display(),
            a.out.display(),
            img.width(),
            img.height()
        ),
    )
}

fn init(a: &InitArgs, as_json: bool, out: &mut (dyn Write + Send)) -> Outcome {
    let mut config = match preset(a.profile) {
        Some(p) => p.net_config(),
        None => {
            let (Some(c), Some(k), Some(r), Some(m)) = (a.channels, a.mixtures, a.resblocks, a.scales) else {
                return Err(Failure::Usage(
                    "--profile custom needs --channels, --mixtures, --resblocks and --scales".into(),
                ));
            };
            NetConfig::new(c, k, r, m, a.grouping.unwrap_or(GroupingMethod::FixedA))
        }
    };
    if a.profile != ProfileName::Custom {
        if a.channels.is_some() || a.mixtures.is_some() || a.resblocks.is_some() || a.scales.is_some() {
            return Err(Failure::Usage("network sizes can only be set with --profile custom".into()));
        }
        if let Some(g) = a.grouping {
            config.grouping = g;
        }
    }
    config.share_weights = a.share_weights;
    let model = ModelWeights::init(config, a.seed)?;
    let hash = checkpoint::save(&model, &a.out)?;
    let params = model.config.parameter_count();
    if as_json {
        return emit_json(
            out,
            json!({
                "command": "init",
                "out": a.out,
                "parameters": params,
                "model_hash": checkpoint::hex(&hash),
            }),
        );
    }
    emit(
        out,
        &format!("wrote {} ({} parameters)\nmodel hash {}\n", a.out.display(), params, checkpoint::hex(&hash)),
    )
}

fn train_cmd(a: &TrainArgs, as_json: bool, out: &mut (dyn Write + Send)) -> Outcome {
    let data = Dataset::from_dir(&a.data)?;
    if data.is_empty() {
        return Err(Failure::Data(Error::InvalidArgument(format!("{}: no images", a.data.display()))));
    }
    let mut model = match (&a.model, a.profile) {
        (Some(p), _) => load_model(p)?.0,
        (None, ProfileName::Custom) => {
            return Err(Failure::Usage("--profile custom needs a starting --model (see `mspc init`)".into()))
        }
        (None, name) => ModelWeights::init(preset(name).expect("preset").net_config(), a.seed)?,
    };
    let profile = resolve_profile(a.profile, &model.config, None)?;
    let mut config = TrainConfig::new(profile);
    config.lr = a.lr;
    config.batch = a.batch;
    config.crop = a.crop;
    config.epochs = a.epochs;
    config.patience = a.patience;
    config.seed = a.seed;
    config.groups = a.groups;
    config.max_steps = a.max_steps;
    config.time_budget = a.seconds.map(Duration::from_secs_f64);
    config.dataset = Some(a.data.clone());
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let outputs = TrainOutputs {
        checkpoint: Some(a.out.clone()),
        log: a.log.clone(),
    };
    let mut lines = String::new();
    let report = train::train(&mut model, &config, &data, &outputs, |r| {
        if !as_json {
            let _ = writeln!(
                lines,
                "epoch {:>3}  train {:.4}  val {:.4}  lr {:.1e}  steps {}  clipped {}",
                r.epoch, r.train_bpp, r.val_bpp, r.lr, r.steps, r.clipped
            );
        }
    })?;
    let clipped: usize = report.epochs.iter().map(|e| e.clipped).sum();
    if as_json {
        return emit_json(
            out,
            json!({
                "command": "train",
                "out": a.out,
                "log": a.log,
                "epochs": report.epochs,
                "best_val_bpp": report.best_val_bpp,
                "constant_bpp": report.constant_bpp,
                "steps": report.steps,
                "clipped_steps": clipped,
                "seconds": report.seconds,
            }),
        );
    }
    let _ = writeln!(
        lines,
        "best val {:.4} bpp (+{:.4} bpp last-scale constant)\n{} steps, {} clipped, {:.1} s\nwrote {}",
        report.best_val_bpp,
        report.constant_bpp,
        report.steps,
        clipped,
        report.seconds,
        a.out.display()
    );
    emit(out, &lines)
}

fn citation_json(c: &Citation) -> serde_json::Value {
    json!({"method": c.method, "dataset": c.dataset, "metric": c.metric, "value": c.value, "citation": true})
}

fn citation_lines(s: &mut String, title: &str, rows: &[Citation]) {
    let _ = writeln!(s, "{title} (published figures, cited for reference, not measured here)");
    for c in rows {
        let _ = writeln!(s, "  [citation] {:<8} {:<11} {:<20} {}", c.method, c.dataset, c.metric, c.value);
    }
}

fn eval(a: &EvalArgs, as_json: bool, out: &mut (dyn Write + Send)) -> Outcome {
    let (model, hash) = load_model(&a.model)?;
    let profile = resolve_profile(a.profile, &model.config, a.coding.patch)?;
    let data = Dataset::from_dir(&a.data)?;
    if data.is_empty() {
        return Err(Failure::Data(Error::InvalidArgument(format!("{}: no images", a.data.display()))));
    }
    let codec = Codec::with_hash(&model, hash);
    let base = coding_options(profile.clone(), &a.coding);
    let methods: Vec<GroupingMethod> = if a.compare_groupings {
        GroupingMethod::ALL.to_vec()
    } else {
        vec![base.grouping]
    };
    let mut rows: Vec<(GroupingMethod, EvalReport)> = Vec::new();
    for m in methods {
        let opts = base.clone().with_grouping(m);
        rows.push((m, train::evaluate(&data, &codec, &opts)?));
    }
    let references: &[Citation] = if a.compare_groupings {
        &GROUPING_REFERENCE
    } else {
        &RATE_REFERENCE
    };
    if as_json {
        let results: Vec<serde_json::Value> = rows
            .iter()
            .map(|(m, r)| json!({"grouping": m.name(), "report": r}))
            .collect();
        return emit_json(
            out,
            json!({
                "command": "eval",
                "profile": profile.name,
                "images": data.len(),
                "results": results,
                "references": references.iter().map(citation_json).collect::<Vec<_>>(),
            }),
        );
    }
    let mut s = String::new();
    let _ = writeln!(s, "profile {}  images {}", profile.name, data.len());
    for (m, r) in &rows {
        let _ = writeln!(s, "grouping {m}");
        let _ = writeln!(s, "  {:<28} {:>9} {:>9} {:>9}", "image", "bpp", "ce_bpp", "bound");
        for i in &r.images {
            let _ = writeln!(s, "  {:<28} {:>9.4} {:>9.4} {:>9.4}", i.name, i.bpp, i.cross_entropy_bpp, i.overhead_bound_bpp);
        }
        let scales: Vec<String> = r.level_bpp.iter().map(|(l, b)| format!("s{}={:.4}", l - 1, b)).collect();
        let _ = writeln!(
            s,
            "  total bpp {:.4}  bits/subpixel {:.4}  cross-entropy {:.4}  per-scale {}",
            r.bpp,
            r.bits_per_subpixel,
            r.cross_entropy_bpp,
            scales.join(" ")
        );
    }
    if a.compare_groupings {
        let _ = writeln!(s, "{:<10} {:>9}", "grouping", "bpp");
        for (m, r) in &rows {
            let _ = writeln!(s, "{:<10} {:>9.4}", m.name(), r.bpp);
        }
    }
    citation_lines(&mut s, "reference", references);
    emit(out, &s)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub encode_s: f64,
    pub decode_s: f64,
    pub encode_s_per_32x32: f64,
    pub decode_s_per_32x32: f64,
}

fn bench_inputs(path: &Path) -> crate::Result<Dataset> {
    if path.is_dir() {
        Dataset::from_dir(path)
    } else {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Dataset::from_images(vec![(name, Image8::load(path)?)]))
    }
}

fn mean_seconds(runs: usize, mut f: impl FnMut() -> crate::Result<()>) -> crate::Result<f64> {
    f()?;
    let start = Instant::now();
    for _ in 0..runs {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / runs as f64)
}

fn bench(a: &BenchArgs, as_json: bool, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Outcome {
    if a.runs == 0 {
        return Err(Failure::Usage("--runs must be at least 1".into()));
    }
    let (model, hash) = load_model(&a.model)?;
    let profile = resolve_profile(a.profile, &model.config, a.coding.patch)?;
    let data = bench_inputs(&a.input)?;
    if data.is_empty() {
        return Err(Failure::Data(Error::InvalidArgument(format!("{}: no images", a.input.display()))));
    }
    let codec = Codec::with_hash(&model, hash);
    let opts = coding_options(profile.clone(), &a.coding);
    let mut rows = Vec::new();
    for (name, img) in data.items() {
        let bytes = codec.encode(img, &opts)?.bytes;
        if &codec.decode(&bytes)? != img {
            return Err(Failure::Data(Error::Container(format!("{name}: decoded image differs"))));
        }
        let encode_s = mean_seconds(a.runs, || codec.encode(img, &opts).map(|_| ()))?;
        let decode_s = mean_seconds(a.runs, || codec.decode(&bytes).map(|_| ()))?;
        rows.push(BenchRow {
            image: name.clone(),
            width: img.width(),
            height: img.height(),
            encode_s,
            decode_s,
            encode_s_per_32x32: per_32x32(encode_s, img.height(), img.width()),
            decode_s_per_32x32: per_32x32(decode_s, img.height(), img.width()),
        });
    }
    let pixels: f64 = rows.iter().map(|r| (r.width * r.height) as f64).sum();
    let encode = rows.iter().map(|r| r.encode_s).sum::<f64>() * 1024.0 / pixels;
    let decode = rows.iter().map(|r| r.decode_s).sum::<f64>() * 1024.0 / pixels;
    if opts.grouping != GroupingMethod::Dynamic && decode > 2.0 * encode {
        let _ = writeln!(err, "warning: decode ({decode:.4} s) is more than twice encode ({encode:.4} s) per 32x32");
    }
    if let Some(path) = &a.csv {
        let mut csv = String::from("image,width,height,encode_s,decode_s,encode_s_per_32x32,decode_s_per_32x32\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                r.image, r.width, r.height, r.encode_s, r.decode_s, r.encode_s_per_32x32, r.decode_s_per_32x32
            );
        }
        write_file(path, csv.as_bytes())?;
    }
    if as_json {
        return emit_json(
            out,
            json!({
                "command": "bench",
                "profile": profile.name,
                "grouping": opts.grouping.name(),
                "runs": a.runs,
                "images": rows,
                "encode_s_per_32x32": encode,
                "decode_s_per_32x32": decode,
                "references": TIMING_REFERENCE.iter().map(citation_json).collect::<Vec<_>>(),
            }),
        );
    }
    let mut s = String::new();
    let _ = writeln!(s, "profile {} grouping {}  {} timed runs after 1 warmup, 1 CPU process", profile.name, opts.grouping, a.runs);
    let _ = writeln!(s, "  {:<28} {:>9} {:>14} {:>14}", "image", "size", "enc s/32x32", "dec s/32x32");
    for r in &rows {
        let _ = writeln!(
            s,
            "  {:<28} {:>9} {:>14.5} {:>14.5}",
            r.image,
            format!("{}x{}", r.width, r.height),
            r.encode_s_per_32x32,
            r.decode_s_per_32x32
        );
    }
    let _ = writeln!(s, "  {:<28} {:>9} {:>14.5} {:>14.5}", "all", "", encode, decode);
    citation_lines(&mut s, "reference, GPU", &TIMING_REFERENCE);
    emit(out, &s)
}

fn inspect(a: &InspectArgs, as_json: bool, out: &mut (dyn Write + Send)) -> Outcome {
    let bytes = std::fs::read(&a.file).map_err(|e| Error::io(&a.file, e))?;
    let (c, header_ok) = Container::parse_unverified(&bytes)?;
    let bad = c.bad_patches();
    let model = match &a.model {
        Some(p) => Some(load_model(p)?.1),
        None => None,
    };
    let h = &c.header;
    let profile = Profile::by_id(h.profile_id).map_or_else(|| "custom".to_string(), |p| p.name);
    let model_match = model.map(|m| m == h.model_hash);
    if as_json {
        let patches: Vec<serde_json::Value> = c
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                json!({
                    "payload_bytes": e.payload_len,
                    "raw_bytes": e.raw_len,
                    "crc": format!("{:08x}", e.crc),
                    "crc_ok": !bad.contains(&i),
                })
            })
            .collect();
        emit_json(
            out,
            json!({
                "command": "inspect",
                "file": a.file,
                "bytes": bytes.len(),
                "width": h.width,
                "height": h.height,
                "scales": h.scales,
                "profile_id": h.profile_id,
                "profile": profile,
                "grouping": h.grouping.name(),
                "phase": if h.phase == SubsetPhase::EvenEven { "even" } else { "odd" },
                "groups": h.groups,
                "seed": h.seed,
                "patch": h.patch,
                "model_hash": checkpoint::hex(&h.model_hash),
                "model_match": model_match,
                "header_crc_ok": header_ok,
                "patches": patches,
            }),
        )?;
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "file        {} ({} bytes)", a.file.display(), bytes.len());
        let _ = writeln!(s, "dimensions  {}x{}", h.width, h.height);
        let _ = writeln!(s, "scales      {}", h.scales);
        let _ = writeln!(s, "profile     {} (id {})", profile, h.profile_id);
        let _ = writeln!(s, "grouping    {}", h.grouping);
        let _ = writeln!(s, "subset      {}", if h.phase == SubsetPhase::EvenEven { "even/even" } else { "odd/odd" });
        let _ = writeln!(s, "groups      {:?}", h.groups);
        let _ = writeln!(s, "seed        {}", h.seed);
        let _ = writeln!(s, "patch size  {}", h.patch);
        let _ = writeln!(s, "model hash  {}", checkpoint::hex(&h.model_hash));
        if let Some(ok) = model_match {
            let _ = writeln!(s, "model       {}", if ok { "matches" } else { "DIFFERS" });
        }
        let _ = writeln!(s, "header crc  {}", if header_ok { "ok" } else { "MISMATCH" });
        let _ = writeln!(s, "patches     {}", c.entries.len());
        for (i, e) in c.entries.iter().enumerate() {
            let flag = if bad.contains(&i) { "  TAMPERED" } else { "" };
            let _ = writeln!(
                s,
                "  {:>4}  payload {:>8}  raw {:>6}  crc {:08x}{}",
                i, e.payload_len, e.raw_len, e.crc, flag
            );
        }
        emit(out, &s)?;
    }
    if !header_ok {
        return Err(Failure::Data(Error::Checksum("container header".into())));
    }
    if !bad.is_empty() {
        return Err(Failure::Data(Error::Checksum(format!("patches {bad:?}"))));
    }
    Ok(())
}
