use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use motion_subspace::ica::Contrast;

mod commands;
mod config;
mod report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] motion_subspace::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(e) => e.exit_code() as u8,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "motionsub", version, about = "Fit, apply and analyse linear motion subspaces of latent-code trajectories")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file with default flags for the subcommand
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a motion subspace to single-motion trajectories
    Fit(FitArgs),
    /// Split a trajectory into per-subspace motions and recombine them
    Decompose(DecomposeArgs),
    /// Apply the motion of a driving trajectory to a source code
    Transfer(TransferArgs),
    /// Compare the leading components of two subspaces
    Ortho(OrthoArgs),
    /// Explained-variance curve of a transition dataset
    Variance(VarianceArgs),
    /// Aggregated pose motion of landmark tracks
    Apm(ApmArgs),
    /// FastICA baseline over a transition dataset
    Ica(IcaArgs),
    /// Keep selected ICA components of a trajectory's motion
    IcaProject(IcaProjectArgs),
    /// Generate synthetic trajectories with known motion subspaces
    Synth(SynthArgs),
    /// Convert raw dumps and landmark CSV into the binary formats
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    FacePose,
    FaceExpression,
    Car,
}

impl Preset {
    pub fn k(self) -> usize {
        match self {
            Preset::FacePose => 35,
            Preset::FaceExpression => 50,
            Preset::Car => 10,
        }
    }

    pub fn layer_count(self) -> usize {
        10
    }
}

#[derive(Args, Debug, Clone)]
pub struct LayerArgs {
    /// first coarse layer carrying motion [default: 0]
    #[arg(long)]
    pub layer_start: Option<usize>,
    /// number of coarse layers [default: 10]
    #[arg(long)]
    pub layer_count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// trajectory files (.ltrj)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value = "motion")]
    pub label: String,
    /// number of components
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[command(flatten)]
    pub layers: LayerArgs,
    /// subtract the dataset mean before the decomposition
    #[arg(long)]
    pub center: bool,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    pub input: PathBuf,
    /// subspace model files (.msub), one per motion
    #[arg(short, long = "subspace", required = true)]
    pub subspaces: Vec<PathBuf>,
    /// comma-separated strengths, one per subspace [default: all 1]
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub normalize_alphas: bool,
    /// keep layers outside the motion range at their first-frame values
    #[arg(long)]
    pub freeze_fine: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// trajectory whose first frame is the source code
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub driving: PathBuf,
    #[arg(short, long = "subspace", required = true)]
    pub subspaces: Vec<PathBuf>,
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub normalize_alphas: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct OrthoArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long, default_value_t = motion_subspace::analysis::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// components to report [default: full rank]
    #[arg(long)]
    pub max_k: Option<usize>,
    #[command(flatten)]
    pub layers: LayerArgs,
    #[arg(long)]
    pub center: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ApmArgs {
    /// landmark tracks (.lmrk or .csv)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = motion_subspace::analysis::DEFAULT_APM_STRIDE)]
    pub stride: usize,
    /// per-file CSV report
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ContrastArg {
    Logcosh,
    Exp,
}

impl From<ContrastArg> for Contrast {
    fn from(c: ContrastArg) -> Self {
        match c {
            ContrastArg::Logcosh => Contrast::LogCosh,
            ContrastArg::Exp => Contrast::Exp,
        }
    }
}

#[derive(Args, Debug)]
pub struct IcaArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// number of independent components
    #[arg(short, long, default_value_t = motion_subspace::ica::DEFAULT_COMPONENTS)]
    pub components: usize,
    #[arg(long, default_value_t = motion_subspace::ica::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = motion_subspace::ica::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "logcosh")]
    pub contrast: ContrastArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub layers: LayerArgs,
    /// model output (JSON)
    #[arg(short, long)]
    pub output: PathBuf,
    /// write one trajectory per component sweeping the first input frame along it,
    /// plus an annotation template
    #[arg(long)]
    pub perturb_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 9)]
    pub perturb_steps: usize,
    /// sweep half-width in source standard deviations
    #[arg(long, default_value_t = 3.0)]
    pub perturb_scale: f64,
}

#[derive(Args, Debug)]
pub struct IcaProjectArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// comma-separated component indices
    #[arg(long)]
    pub select: Option<String>,
    /// annotation file with `component_index,label` rows
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// keep the components annotated with this label
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub freeze_fine: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// comma-separated per-motion subspace dimensions
    #[arg(long, default_value = "8,8")]
    pub dims: String,
    /// width of each latent layer
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// layers carrying motion
    #[arg(long, default_value_t = 10)]
    pub layer_count: usize,
    /// extra jittered layers after the motion layers
    #[arg(long, default_value_t = 8)]
    pub fine_layers: usize,
    /// pure-motion trajectories per motion
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
    /// trajectories mixing every motion
    #[arg(long, default_value_t = 0)]
    pub mixed: usize,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Student-t coefficients and noise instead of Gaussian
    #[arg(long)]
    pub heavy_tailed: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DType {
    F32,
    F64,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// shape of a raw float dump as FRAMES,LAYERS,DIM
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long, value_enum, default_value = "f32")]
    pub dtype: DType,
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Ortho(a) => commands::ortho(a),
        Command::Variance(a) => commands::variance(a),
        Command::Apm(a) => commands::apm(a),
        Command::Ica(a) => commands::ica(a),
        Command::IcaProject(a) => commands::ica_project(a),
        Command::Synth(a) => commands::synth(a),
        Command::Convert(a) => commands::convert(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            println!("{}", serde_json::json!({ "ok": false, "error": e.to_string() }));
            ExitCode::from(e.exit_code())
        }
    }
}
