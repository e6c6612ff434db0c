//! Command-line runner for bangbang experiments.
//!
//! Exit status: 0 when every declared check passes, 1 on a failed check or a
//! runtime error, 2 on a configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use bangbang::experiment::{exit_code, run, RunOptions, OUT_DIR_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bangbang",
    version,
    about = "Bilinear parabolic optimal control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration file.
    Run {
        config: PathBuf,
        /// Output directory; overrides $BANGBANG_OUT_DIR and the config file.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Seed for random directions and perturbations.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Command::Run { config, out, seed } = cli.command;
    log::debug!(
        "output override from ${OUT_DIR_ENV}: {:?}",
        std::env::var_os(OUT_DIR_ENV)
    );
    let result = run(&config, &RunOptions { out_dir: out, seed });
    match &result {
        Ok(outcome) => {
            for check in outcome.bundle.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "check `{}` failed: value {} vs threshold {}",
                    check.name, check.value, check.threshold
                );
            }
            println!("{}", outcome.output_dir.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
