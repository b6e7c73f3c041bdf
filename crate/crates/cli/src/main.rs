//! Experiment runner: loads a problem spec, runs one experiment, writes
//! CSV tables plus a machine-readable summary, and exits nonzero when the
//! selected invariants fail.

mod experiments;
mod report;
mod spec_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

const COMMANDS: &[&str] = &[
    "riccati",
    "control",
    "cost",
    "optimality",
    "filter",
    "maxcond",
    "variation-order",
    "girsanov-check",
    "picard",
    "decoupling",
];

#[derive(Parser, Debug)]
#[command(
    name = "fbsdeplab",
    about = "Numerical experiments for partially observed control of forward-backward systems with jumps",
    version
)]
struct Cli {
    /// Experiment to run.
    #[arg(value_parser = COMMANDS.to_vec())]
    command: String,

    /// Problem spec file.
    #[arg(long)]
    spec: PathBuf,

    /// Output directory for CSV tables, summary, and log.
    #[arg(long)]
    out: PathBuf,

    /// Overrides the spec's Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the spec's Monte Carlo path count.
    #[arg(long)]
    paths: Option<usize>,

    /// Caps the worker thread count (default: FBSDEPLAB_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("FBSDEPLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("fbsdeplab: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }

    let mut spec = match spec_file::load_spec(&cli.spec) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("fbsdeplab: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(paths) = cli.paths {
        spec.paths = paths;
    }

    let started = std::time::Instant::now();
    match experiments::run(&cli.command, &spec) {
        Ok(mut report) => {
            report.log(format!(
                "command={} spec={} seed={} paths={} elapsed={:.2}s",
                cli.command,
                cli.spec.display(),
                spec.seed,
                spec.paths,
                started.elapsed().as_secs_f64()
            ));
            if let Err(e) = report.write(&cli.out) {
                eprintln!("fbsdeplab: cannot write report: {e}");
                return ExitCode::from(1);
            }
            println!(
                "{}: {} (summary in {})",
                cli.command,
                if report.pass { "pass" } else { "FAIL" },
                cli.out.join("summary.txt").display()
            );
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("fbsdeplab: {} failed: {e}", cli.command);
            ExitCode::from(1)
        }
    }
}
