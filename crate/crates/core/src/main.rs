use std::process::ExitCode;

use clap::Parser;
use diffdraft::harness::cli::{run, Cli};
use diffdraft::Error;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Bad configuration is a usage error, like a bad flag.
            let code = match e {
                Error::InvalidConfig(_) | Error::ConfigParse(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
