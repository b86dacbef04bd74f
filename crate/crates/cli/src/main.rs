//! `chromahint` command-line tool.
//!
//! Exit codes: 0 on success, 1 when the command fails (including partial
//! failures in batch colorization), 2 on usage errors.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chromahint_core::bench::Sampler;
use chromahint_core::pipeline::{EvalMode, Split};

#[derive(Debug, Parser)]
#[command(name = "chromahint", version, about = "User-guided grayscale colorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Computes the quantized in-gamut ab bins and writes them as JSON.
    MakeGamut(MakeGamutArgs),
    /// Writes a procedural color-scene corpus for desk-scale training.
    MakeDataset(MakeDatasetArgs),
    /// Scans an image directory and writes a split manifest.
    Ingest(IngestArgs),
    /// Trains a local or global hint network.
    Train(TrainArgs),
    /// Reports PSNR of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Runs the PSNR-versus-points benchmark and writes CSV.
    Bench(BenchArgs),
    /// Colorizes a file or directory, optionally with per-image points.
    Colorize(ColorizeArgs),
    /// Serves the HTTP API.
    Serve(ServeArgs),
}

/// Where to find a gamut; the shipped reference when omitted.
#[derive(Debug, Args)]
struct GamutArg {
    /// Gamut JSON written by make-gamut.
    #[arg(long)]
    gamut: Option<PathBuf>,
}

/// Dataset selection shared by eval and bench.
#[derive(Debug, Args)]
struct DataArgs {
    /// Image directory (ingested on the fly) or a manifest JSON.
    #[arg(long)]
    dataset: PathBuf,
    /// Split to use, or `all`.
    #[arg(long, default_value = "test")]
    split: SplitArg,
    /// Center-crop and resize to this side; 0 keeps images as they are.
    #[arg(long, default_value_t = 0)]
    size: u32,
    /// Use at most this many images (0 = all).
    #[arg(long, default_value_t = 0)]
    limit: usize,
}

#[derive(Debug, Clone, Copy)]
enum SplitArg {
    All,
    One(Split),
}

impl std::str::FromStr for SplitArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(SplitArg::All);
        }
        s.parse().map(SplitArg::One).map_err(|e: chromahint_core::Error| e.to_string())
    }
}

#[derive(Debug, Args)]
struct MakeGamutArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    grid_step: f64,
    #[arg(long, default_value_t = -110.0, allow_negative_numbers = true)]
    ab_min: f64,
    #[arg(long, default_value_t = 110.0, allow_negative_numbers = true)]
    ab_max: f64,
}

#[derive(Debug, Args)]
struct MakeDatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Manifest path; defaults to `<dataset>/manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML or JSON training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image directory (ingested on the fly) or a manifest JSON.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    gamut: GamutArg,
    /// Log every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "auto")]
    mode: EvalMode,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    gamut: GamutArg,
    /// Also write the summary, with per-image scores, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Any of gray, levin, network (needs --ckpt).
    #[arg(long, value_delimiter = ',', default_value = "gray,levin")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "random,max_error")]
    samplers: Vec<Sampler>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10,20,50,100,200,500")]
    points: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Local-variant checkpoint for the network method.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    gamut: GamutArg,
    /// CSV destination; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ColorizeArgs {
    /// An image file or a directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON object mapping input file names to point lists.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, default_value_t = chromahint_service::DEFAULT_WORKING_SIDE)]
    working_side: u32,
    #[command(flatten)]
    gamut: GamutArg,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Local-variant checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Optional global-variant checkpoint enabling /global.
    #[arg(long)]
    global_ckpt: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = chromahint_service::DEFAULT_WORKING_SIDE)]
    working_side: u32,
    #[arg(long, default_value_t = 2048)]
    max_side: u32,
    #[command(flatten)]
    gamut: GamutArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeGamut(a) => commands::make_gamut(a),
        Command::MakeDataset(a) => commands::make_dataset(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Colorize(a) => commands::colorize(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
