//! Binary entry point: parse arguments, run the command, map the outcome to
//! an exit code. 0 = completed (and, for tests, H0 not rejected); 1 = test
//! rejected H0; 2 = any operational error (bad usage, unreadable input,
//! failed estimation).

use std::process::ExitCode;

use clap::Parser;
use warpfit_cli::commands::{run, Cli};
use warpfit_cli::Outcome;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            if !output.wrote_file {
                print!("{}", output.json);
            }
            match output.outcome {
                Outcome::Completed => ExitCode::from(0),
                Outcome::Rejected => ExitCode::from(1),
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
