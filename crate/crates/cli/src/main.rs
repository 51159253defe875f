use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ebsde_cli::Subcommand;

/// Ergodic BSDE experiments driven by a TOML config.
#[derive(Parser)]
#[command(name = "ebsde", version)]
struct Args {
    #[arg(value_enum)]
    command: Subcommand,
    config: PathBuf,
    /// Worker thread cap; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match ebsde_cli::run(args.command, &args.config, args.threads) {
        Ok(out) => {
            if out.passed {
                println!("{}: ok, wrote {}", args.command.name(), out.output_dir.display());
            } else {
                println!("{}: check failed, see {}", args.command.name(), out.output_dir.join("summary.json").display());
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
