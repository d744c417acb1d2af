use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use commitgap::cli::{execute, Cli};
use commitgap::env::EnvOverrides;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = EnvOverrides::from_process()
        .map_err(anyhow::Error::from)
        .and_then(|env| execute(cli, &env, &mut out));
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
