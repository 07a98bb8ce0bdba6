use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use tilq::cli::{init_threads, run, RunConfig};

fn main() -> ExitCode {
    let cfg = RunConfig::parse();
    let result = init_threads().and_then(|()| run(&cfg));
    match result {
        Ok(outcome) => {
            let mut out = std::io::stdout().lock();
            let _ = write!(out, "{}", outcome.summary);
            let _ = writeln!(out, "artifacts written to {}", cfg.out.display());
            ExitCode::from(outcome.status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
