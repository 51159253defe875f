//! Batch front end: a TOML config in, deterministic CSV tables plus
//! `summary.json` and `manifest.json` out.

// `!(a < b)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, LoadedConfig};
pub use error::CliError;
pub use output::Artifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Validate,
    Simulate,
    Contraction,
    SolveFinite,
    SolveDiscounted,
    Ergodic,
    LargeTime,
    Control,
    VerifyAll,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Simulate => "simulate",
            Subcommand::Contraction => "contraction",
            Subcommand::SolveFinite => "solve-finite",
            Subcommand::SolveDiscounted => "solve-discounted",
            Subcommand::Ergodic => "ergodic",
            Subcommand::LargeTime => "large-time",
            Subcommand::Control => "control",
            Subcommand::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    /// False when a scientific check failed (exit status 2).
    pub passed: bool,
    pub artifacts: Artifacts,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

/// Relative `output_dir` values are resolved against the config file's
/// directory; artifacts go to `<output_dir>/<subcommand>/`.
pub fn output_dir(cfg: &LoadedConfig, cmd: Subcommand) -> PathBuf {
    let base = if cfg.config.output_dir.is_absolute() {
        cfg.config.output_dir.clone()
    } else {
        cfg.path.parent().unwrap_or(Path::new(".")).join(&cfg.config.output_dir)
    };
    base.join(cmd.name())
}

pub fn execute(cmd: Subcommand, cfg: &LoadedConfig) -> Result<(Artifacts, bool), CliError> {
    match cmd {
        Subcommand::Validate => commands::validate(cfg),
        Subcommand::Simulate => commands::simulate(cfg),
        Subcommand::Contraction => commands::contraction(cfg),
        Subcommand::SolveFinite => commands::solve_finite(cfg),
        Subcommand::SolveDiscounted => commands::solve_discounted(cfg),
        Subcommand::Ergodic => commands::ergodic(cfg),
        Subcommand::LargeTime => commands::large_time(cfg),
        Subcommand::Control => commands::control(cfg),
        Subcommand::VerifyAll => commands::verify_all(cfg),
    }
}

/// Load the config, run `cmd` on a pool of `threads` workers (0 = all
/// cores) and write the artifacts.
pub fn run(cmd: Subcommand, config_path: &Path, threads: usize) -> Result<Outcome, CliError> {
    let cfg = config::load(config_path)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    let workers = pool.current_num_threads();
    let (artifacts, passed) = pool.install(|| execute(cmd, &cfg))?;
    let dir = output_dir(&cfg, cmd);
    let info = output::RunInfo {
        subcommand: cmd.name(),
        config_path: &cfg.path,
        config_text: &cfg.text,
        seed: cfg.config.seed,
        threads: workers,
    };
    let files = output::write_all(&dir, &artifacts, &info)?;
    Ok(Outcome { passed, artifacts, output_dir: dir, files })
}
