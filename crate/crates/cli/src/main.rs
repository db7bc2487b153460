use clap::Parser;
use sgc_cli::Cli;
use std::process::ExitCode;

fn main() -> ExitCode {
    // SGC_THREADS caps worker parallelism for per-day preprocessing
    if let Ok(threads) = std::env::var("SGC_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: SGC_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::FAILURE;
            }
        }
    }
    let cli = Cli::parse();
    match sgc_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
