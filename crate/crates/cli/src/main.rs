use std::process::ExitCode;

use clap::Parser;
use pimcaps_cli::output::OUT_DIR_ENV;
use pimcaps_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_out = std::env::var(OUT_DIR_ENV).ok();
    match run(&cli, env_out.as_deref()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
