//! Batch driver for the forward, linearization, probe, reconstruction and
//! verification pipelines.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mfg_core::Error),
    #[error("verification: {0}")]
    Verification(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mfg_core::Error as E;
        match self {
            CliError::Verification(_) => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::Capability(_) | E::Range(_) | E::Json(_) => 1,
                E::Solver(_) | E::NotConverged { .. } => 2,
                E::Probe(_) => 3,
                E::Conditioning(_) => 4,
                E::Data(_) | E::Domain(_) | E::Io(_) => 5,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Forward,
    Linearize,
    Probe,
    Reconstruct,
    Verify,
    Catalog,
}

/// Run-level overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: usize,
}

/// Output root override, the one setting read from the environment.
pub const OUT_ROOT_VAR: &str = "MFGIP_OUT_ROOT";

/// Loads the config, applies overrides and runs `cmd` inside a pool of
/// `workers` threads. Returns the SHA-256 of the written manifest.
pub fn run(cmd: Command, config: &Path, ov: &Overrides) -> CliResult<String> {
    let mut loaded = config::ExperimentConfig::load(config)?;
    if let Some(s) = ov.seed {
        loaded.config.seed = s;
    }
    let mut out = ov.out.clone().unwrap_or_else(|| loaded.base_dir.join(&loaded.config.out));
    if out.is_relative() {
        if let Ok(root) = std::env::var(OUT_ROOT_VAR) {
            out = Path::new(&root).join(out);
        }
    }
    loaded.config.out = out.clone();
    mfg_core::exec::with_workers(ov.workers, || match cmd {
        Command::Forward => commands::forward(&loaded, &out),
        Command::Linearize => commands::linearize(&loaded, &out),
        Command::Probe => commands::probe(&loaded, &out),
        Command::Reconstruct => commands::reconstruct(&loaded, &out),
        Command::Verify => commands::verify(&loaded, &out),
        Command::Catalog => commands::catalog(&loaded, &out),
    })
}
