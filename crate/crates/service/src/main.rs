use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ccs_service::cli::Cli::parse();
    match ccs_service::cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
