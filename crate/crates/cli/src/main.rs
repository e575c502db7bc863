mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use advmakeup::Error;
use clap::{Args, CommandFactory, Parser, Subcommand};

/// Environment variable naming the directory that holds run directories.
pub const RUN_ROOT_ENV: &str = "ADVMAKEUP_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "advmakeup",
    version,
    about = "Adversarial makeup transfer against face recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the surrogate models and the makeup generator.
    Train(TrainArgs),
    /// Apply a trained generator to a directory of faces.
    Protect(ProtectArgs),
    /// Measure ASR, FID, PSNR and SSIM of the generator or a baseline attack.
    Evaluate(EvaluateArgs),
    /// Compute FAR thresholds for the models in a checkpoint.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    pub config: PathBuf,
    /// `key.path=value`, applied after the file. Repeatable.
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory. Defaults to `$ADVMAKEUP_RUN_ROOT/<config hash prefix>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs", hide_env_values = true)]
    pub run_root: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Resume even if the checkpoint was written under another config.
    #[arg(long, requires = "resume")]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ProtectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of bare faces.
    #[arg(long)]
    pub sources: PathBuf,
    /// Made-up face whose style is transferred.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate a baseline attack on the checkpoint's ensemble instead of the generator.
    #[arg(long, value_parser = ["none", "pgd", "mifgsm", "tidim"])]
    pub attack: Option<String>,
    /// L∞ budget in [-1, 1] pixel units.
    #[arg(long, conflicts_with = "eps_u8")]
    pub eps: Option<f64>,
    /// L∞ budget in 8-bit levels (8 means 8/255 of the range).
    #[arg(long)]
    pub eps_u8: Option<f64>,
    #[arg(long, conflicts_with = "alpha_u8")]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha_u8: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Directory with `sources/` and `references/`. Defaults to the synthetic test population.
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    #[arg(long)]
    pub far: Option<f64>,
    /// Thresholds written by `calibrate`; computed on the fly otherwise.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Output directory for report.json, images.csv and asr.png.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub far: Option<f64>,
    /// Synthetic identities in the calibration population.
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub per_identity: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } => 3,
        Error::ShapeMismatch { .. } | Error::Budget(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Protect(a) => commands::protect(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Calibrate(a) => commands::calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                let name = match cli.command {
                    Command::Train(_) => "train",
                    Command::Protect(_) => "protect",
                    Command::Evaluate(_) => "evaluate",
                    Command::Calibrate(_) => "calibrate",
                };
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
