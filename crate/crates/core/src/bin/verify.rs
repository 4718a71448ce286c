use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use finsler_core::runner::{run_config, Overrides};

/// Run the checks listed in a JSON config and report the verdicts.
#[derive(Parser, Debug)]
#[command(name = "verify", version)]
struct Args {
    /// Path to the JSON config.
    config: PathBuf,
    /// Print only the machine-readable JSON report.
    #[arg(long)]
    json: bool,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Write each integrated geodesic as CSV into this directory.
    #[arg(long, value_name = "DIR")]
    dump_geodesics: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides { seed: args.seed, samples: args.samples, dump_geodesics: args.dump_geodesics };
    match run_config(&args.config, &overrides) {
        Ok(report) => {
            if args.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("verify: {e}");
            ExitCode::from(2)
        }
    }
}
