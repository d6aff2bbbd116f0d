use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdmpc::config::ExperimentConfig;
use sdmpc::experiments::{
    cmd_certify, cmd_figure1, cmd_simulate, cmd_sweep, cmd_table1, cmd_viability,
};
use sdmpc::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

/// Sampled-data MPC without terminal ingredients: closed-loop experiments
/// and horizon-length certificates.
#[derive(Parser, Debug)]
#[command(name = "sdmpc", version)]
struct Cli {
    /// TOML configuration with [system], [constraints], [cost], [solver]
    /// and [experiment] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Exit with status 4 when results disagree with the reference study.
    #[arg(long, global = true)]
    acceptance: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Closed-loop runs for every (x0, delta) at a fixed horizon.
    Simulate,
    /// Smallest successful horizon over the (x0, delta) grid.
    Table1,
    /// The four captioned trajectories with the kernel boundary.
    Figure1,
    /// Constants, horizon condition and bound for each delta.
    Certify,
    /// Kernel geometry, inner approximation and V_inf bounds.
    Viability,
    /// Cartesian sweep over x0, delta and N.
    Sweep,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain { .. } | Error::Dimension(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::Table1 => cmd_table1(&cfg, &cli.out),
        Command::Figure1 => cmd_figure1(&cfg, &cli.out),
        Command::Certify => cmd_certify(&cfg, &cli.out),
        Command::Viability => cmd_viability(&cfg, &cli.out),
        Command::Sweep => cmd_sweep(&cfg, &cli.out),
    };
    match result {
        Ok(report) => {
            for l in &report.lines {
                println!("{l}");
            }
            for f in &report.files {
                log::info!("wrote {}", f.display());
            }
            if cli.acceptance && report.mismatch {
                eprintln!("acceptance: results disagree with the reference study");
                return ExitCode::from(EXIT_MISMATCH);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Domain { hint, .. } = &e {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
