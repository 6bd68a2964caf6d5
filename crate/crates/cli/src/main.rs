use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hqc_lab::config::Config;
use hqc_lab::error::{LabError, LabResult};
use hqc_lab::experiments::{self, EXPERIMENTS};

#[derive(Parser, Debug)]
#[command(
    name = "hqc-lab",
    about = "Run a quasicontinuum convergence experiment"
)]
struct Args {
    /// converge-1d, stochastic-2d, dynamics-1d or equivalence
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    /// CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn run(args: &Args) -> LabResult<bool> {
    if !EXPERIMENTS.contains(&args.experiment.as_str()) {
        return Err(LabError::Config(format!(
            "unknown experiment `{}` (expected one of {})",
            args.experiment,
            EXPERIMENTS.join(", ")
        )));
    }
    let cfg = Config::read(&args.config)?;
    let report = hqc_core::par::with_threads(args.threads, || {
        experiments::run(&args.experiment, cfg, args.seed)
    })?;
    if let Some(out) = &args.out {
        std::fs::write(out, report.table.render())?;
    }
    print!("{}", report.text());
    Ok(report.failures.is_empty())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
