use clap::{Parser, Subcommand};
use mfg_cli::{run, Command, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mfgip", version, about = "Mean field game inverse problem toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the MFG system and write fields and boundary measurements.
    Forward,
    /// Solve the first (and second) order linearized systems.
    Linearize,
    /// Build CGO probes and their residual and decay tables.
    Probe,
    /// Recover cost coefficient differences order by order.
    Reconstruct,
    /// Run the estimate and invariant suites.
    Verify,
    /// List the cost catalog and check the selected cost.
    Catalog,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(1);
    };
    let cmd = match cli.cmd {
        Cmd::Forward => Command::Forward,
        Cmd::Linearize => Command::Linearize,
        Cmd::Probe => Command::Probe,
        Cmd::Reconstruct => Command::Reconstruct,
        Cmd::Verify => Command::Verify,
        Cmd::Catalog => Command::Catalog,
    };
    let ov = Overrides { out: cli.out, seed: cli.seed, workers: cli.workers };
    match run(cmd, &config, &ov) {
        Ok(hash) => {
            println!("manifest {hash}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
