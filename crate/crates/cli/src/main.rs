mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lrnr", version, about = "Train, analyze and compress low rank neural representations of wave data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an analytic dataset.
    Gen(GenArgs),
    /// Train a meta-network on a dataset.
    Train(TrainArgs),
    /// Reconstruct fields on a grid or on the points of a dataset.
    Eval(EvalArgs),
    /// Coefficient snapshots, singular values, truncation report and temporal fits.
    Hypermodes(HypermodeArgs),
    /// Field after a tangent step along one hypermode.
    Perturb(ModeArgs),
    /// Field after a step along one hypermode scaled by its rate of change.
    Extrap(ModeArgs),
    /// Build a FastLRNR and sweep its rank.
    Compress(CompressArgs),
    /// Point evaluation through a compressed model, with operation counts.
    FastEval(FastEvalArgs),
    /// Empirical approximation rates of the exact wave constructions.
    RateStudy(RateArgs),
    /// Finite-difference audit of the training gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Problem {
    Advection1d,
    Wave1d,
    #[value(name = "wave2d-planar")]
    Wave2dPlanar,
    #[value(name = "burgers1d-riemann")]
    Burgers1dRiemann,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub problem: Problem,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 81)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 0.0)]
    pub t_start: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Propagation speed (wave) or velocity (advection).
    #[arg(long, default_value_t = 0.5)]
    pub speed: f64,
    #[arg(long, default_value_t = 4)]
    pub value_atoms: usize,
    #[arg(long, default_value_t = 4)]
    pub velocity_atoms: usize,
    /// Advection bump center and width.
    #[arg(long, default_value_t = 0.25)]
    pub center: f64,
    #[arg(long, default_value_t = 0.08)]
    pub width: f64,
    /// Riemann states and jump location.
    #[arg(long, default_value_t = 1.0)]
    pub left: f64,
    #[arg(long, default_value_t = 0.0)]
    pub right: f64,
    #[arg(long, default_value_t = 0.25)]
    pub jump_at: f64,
    /// Spatial interval of the Riemann problem.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub hi: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs instead of the configured count.
    #[arg(long)]
    pub until: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation time (with --grid).
    #[arg(long, allow_hyphen_values = true)]
    pub t: Vec<f64>,
    /// `lo:hi:cells` per axis, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Evaluate at every snapshot of a dataset instead of a grid.
    #[arg(long, conflicts_with = "grid")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HypermodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of equally spaced snapshot times over the training interval.
    #[arg(long, default_value_t = 81)]
    pub times: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub energy_tol: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 30)]
    pub degree: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Store the basis in the checkpoint.
    #[arg(long)]
    pub save: bool,
}

#[derive(Args, Debug)]
pub struct ModeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub t: f64,
    /// 1-based hypermode index.
    #[arg(long)]
    pub mode: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub eta: f64,
    /// Scale `eta` by the norm of the hypermode coordinates at `t`.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// Snapshot times and energy tolerance when the checkpoint has no stored basis.
    #[arg(long, default_value_t = 81)]
    pub times: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub energy_tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Anchor point, coordinates comma separated; repeat for several anchors.
    #[arg(long = "x", allow_hyphen_values = true, required = true)]
    pub anchors: Vec<String>,
    /// Equally spaced snapshot times for the hidden bases.
    #[arg(long, default_value_t = 321)]
    pub times: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub max_rank: Option<usize>,
    /// Project coefficients onto the checkpoint's stored hypermodes.
    #[arg(long)]
    pub hypermodes: bool,
    /// Checkpoint to write with the compressed model attached.
    #[arg(long)]
    pub out: PathBuf,
    /// Rank sweep CSV.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FastEvalArgs {
    /// Checkpoint carrying a compressed model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation point; defaults to the first anchor.
    #[arg(long = "x", allow_hyphen_values = true)]
    pub point: Option<String>,
    /// Number of equally spaced evaluation times over the training interval.
    #[arg(long, default_value_t = 80)]
    pub times: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RateArgs {
    #[arg(long, value_parser = ["wave1d", "wave2d", "advection1d"])]
    pub problem: String,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw atoms independently instead of by stratified sampling.
    #[arg(long)]
    pub iid: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Hypermodes(a) => commands::hypermodes(&a),
        Command::Perturb(a) => commands::mode_field(&a, false),
        Command::Extrap(a) => commands::mode_field(&a, true),
        Command::Compress(a) => commands::compress(&a),
        Command::FastEval(a) => commands::fast_eval(&a),
        Command::RateStudy(a) => commands::rate_study(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
