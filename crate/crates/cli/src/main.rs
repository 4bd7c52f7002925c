use std::process::ExitCode;

use clap::Parser;
use mdpcg_cli::{exit_code, Cli, INPUT_ERROR};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors, which is reserved for the iteration cap
            return ExitCode::from(if e.use_stderr() { INPUT_ERROR } else { 0 });
        }
    };
    ExitCode::from(exit_code(&cli))
}
