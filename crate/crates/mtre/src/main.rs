use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtre::cli::{cmd_calibrate, cmd_eval, cmd_kl, cmd_synth, cmd_train, RunConfig};
use mtre::error::{Error, Result};

/// Multi-token reliability estimation over per-token logit sequences.
#[derive(Parser)]
#[command(name = "mtre", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic logit dataset with known ground truth.
    Synth(CommonArgs),
    /// Train a token-level reliability head.
    Train(CommonArgs),
    /// Cross-fit temperature and stopping-threshold calibration.
    Calibrate(CommonArgs),
    /// Score a test split with the selected methods and report metrics.
    Eval(CommonArgs),
    /// Positionwise KL-divergence curves between the label classes.
    Kl(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config document with per-subcommand sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; every stochastic component derives a named substream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (fixed filenames per subcommand).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread cap; does not affect outputs.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(command: &Command) -> Result<()> {
    let (args, action): (&CommonArgs, fn(&RunConfig, u64, &std::path::Path) -> Result<()>) =
        match command {
            Command::Synth(a) => (a, cmd_synth),
            Command::Train(a) => (a, cmd_train),
            Command::Calibrate(a) => (a, cmd_calibrate),
            Command::Eval(a) => (a, cmd_eval),
            Command::Kl(a) => (a, cmd_kl),
        };
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(threads) = args.threads.or(config.threads) {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let out = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| Error::Config("an output directory is required (--out or config.out)".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    action(&config, seed, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTRE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
