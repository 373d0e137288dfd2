use std::process::ExitCode;

use clap::Parser;
use survcam_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if outcome.command == "synth" {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&outcome.manifest).unwrap_or_default()
                );
            } else {
                println!(
                    "{}: {} subjects, {} failed",
                    outcome.command,
                    outcome.processed,
                    outcome.failures.len()
                );
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
