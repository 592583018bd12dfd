//! `egopose` command-line tool.
//!
//! Exit codes: 0 on success (including partial success), 1 on usage
//! errors, 2 when nothing could be done.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "egopose", version, about = "Ego-pose recovery and alignment for point-cloud scenes")]
struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every frame against every annotated object and save one matrix per scene.
    BuildIntersections(BuildArgs),
    /// Pick a frame for a query from a saved matrix.
    SelectPose(SelectArgs),
    /// Express a scene in the ego frame of one camera.
    Align(AlignArgs),
    /// Yaw-spread statistics of the selectable poses.
    Stats(StatsArgs),
    /// Classify questions as direction-critical or not.
    Classify(LlmArgs),
    /// Grade predicted answers against ground truth.
    Judge(LlmArgs),
    /// Write synthetic scenes in the on-disk layout.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ScoreArgs {
    #[arg(long)]
    pub near: Option<f64>,
    #[arg(long)]
    pub far: Option<f64>,
    /// Depth tolerance for segmentation visibility, in meters.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Box sampling step, in meters.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Integer downscale of the depth buffer.
    #[arg(long)]
    pub zbuffer_scale: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long)]
    pub scans: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to these scene ids.
    #[arg(long)]
    pub scene: Vec<String>,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArg {
    Top,
    Clip,
    Random,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConventionArg {
    Verbatim,
    CameraAxes,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantArg {
    Transform,
    EmbedFeatures,
    Prompt,
    None,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Scans root, used to print the chosen pose.
    #[arg(long)]
    pub scans: Option<PathBuf>,
    /// Directory holding `<scene>.poim`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scene: String,
    /// Target object id; repeat for multi-target queries.
    #[arg(long = "object", required = true)]
    pub objects: Vec<u32>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub clip_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub query_id: u64,
    #[arg(long)]
    pub precision: Option<usize>,
    #[arg(long, value_enum)]
    pub convention: Option<ConventionArg>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub scans: Option<PathBuf>,
    /// Annotations root; needed for `embed-features`.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub scene: String,
    #[arg(long)]
    pub frame: u32,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Output file; standard output when omitted (text variants only).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub precision: Option<usize>,
    #[arg(long, value_enum)]
    pub convention: Option<ConventionArg>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub scans: Option<PathBuf>,
    /// Directory of `.poim` files; defaults to `--out`.
    #[arg(long)]
    pub matrices: Option<PathBuf>,
    /// Directory for `yaw_spreads.csv` and `yaw_kde.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One or more clip ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub clip_ratio: Vec<f64>,
    /// Fixed KDE bandwidth in radians; Silverman's rule when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LlmArgs {
    /// Line-delimited JSON queries.
    pub dataset: PathBuf,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Verdict log path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 20_000)]
    pub points: usize,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 6)]
    pub objects: usize,
    /// Use box and point annotations as well as segmentations.
    #[arg(long)]
    pub mixed: bool,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failed(_) => 2,
        }
    }
}

pub struct Context {
    pub file: FileConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let file = match &cli.config {
        Some(path) => match config::load(path) {
            Ok(c) => c,
            Err(msg) => {
                eprintln!("error: config {msg}");
                return ExitCode::from(1);
            }
        },
        None => FileConfig::default(),
    };
    let level = cli.log_level.clone().or(file.log_level.clone()).unwrap_or_else(|| "warn".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();

    if let Some(workers) = cli.workers.or(file.workers) {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let ctx = Context { file };
    let result = match cli.command {
        Command::BuildIntersections(a) => commands::build_intersections(&ctx, a),
        Command::SelectPose(a) => commands::select_pose(&ctx, a),
        Command::Align(a) => commands::align(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::Classify(a) => commands::llm(&ctx, a, egopose_core::llm::TemplateKind::DirectionCritical),
        Command::Judge(a) => commands::llm(&ctx, a, egopose_core::llm::TemplateKind::JudgeQa),
        Command::Synth(a) => commands::synth(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Usage(m) | CliError::Failed(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(err.code())
        }
    }
}
