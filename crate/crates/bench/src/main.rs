use std::process::ExitCode;

use clap::Parser;
use floodstream_bench::{is_validation, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_validation(&err) { 2 } else { 1 })
        }
    }
}
