use std::process::ExitCode;

use clap::Parser;
use flowseg::cli::{error_line, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(if e.kind() == "validation" || e.kind() == "invalid_argument" { 2 } else { 1 })
        }
    }
}
