use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use isac_sim::experiments::{crlb, emit_beampattern, run_comm, run_search, run_track};
use isac_sim::{CliError, Context, ExperimentConfig, Scale};

#[derive(Parser)]
#[command(name = "isac-sim", version, about = "Dedicated vs zero-overhead ISAC sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parameter profile; overrides the config.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Target searching stage: RMSE and detection over the power sweep.
    Search,
    /// Target tracking stage from ground-truth priors.
    Track,
    /// Sum rate of both schemes in both stages.
    Comm,
    /// Beam patterns and SDR versus closed-form power.
    Beampattern,
    /// ACRB and resolution against the sensing fraction.
    Crlb,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.scale {
        cfg.scale = s;
    }
    let ctx = Context::new(cfg)?;
    std::fs::create_dir_all(&cli.out)?;
    let out: Option<&Path> = Some(&cli.out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| -> Result<(), CliError> {
        match cli.command {
            Command::Search => run_search(&ctx, out).map(|_| ()),
            Command::Track => run_track(&ctx, out).map(|_| ()),
            Command::Comm => run_comm(&ctx, out).map(|_| ()),
            Command::Beampattern => emit_beampattern(&ctx, out).map(|_| ()),
            Command::Crlb => crlb(&ctx, out).map(|_| ()),
        }
    })?;
    eprintln!("wrote results to {}", cli.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
