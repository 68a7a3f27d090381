//! Command-line front end: loads a scenario, runs the sweep and writes the
//! result files.
//!
//! Exit codes: 0 on success, 1 on scenario/validation problems, 2 on runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use linksim::engine::{run_sweep, RunOptions};
use linksim::error::Error;
use linksim::output::write_outputs;
use linksim::scenario::Scenario;

#[derive(Parser, Debug)]
#[command(name = "linksim", version, about = "Link-level simulator for multicarrier waveforms")]
struct Cli {
    /// Scenario file, or the name of a bundled scenario in `scenarios/`.
    #[arg(long, short)]
    scenario: String,

    /// Output directory for results.csv / manifest.json (default: the
    /// scenario's `output.directory`, falling back to `./results`).
    #[arg(long, short)]
    output: Option<PathBuf>,

    /// Overrides the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Runs sweep points in parallel (bit-identical to serial execution).
    #[arg(long)]
    parallel: bool,

    /// Overrides the scenario's frames per sweep point.
    #[arg(long)]
    frames: Option<usize>,

    /// Records per-frame results into frames.csv.
    #[arg(long)]
    dump_frames: bool,
}

/// Accepts a literal path, a path missing its `.toml` suffix, or the name of
/// a scenario bundled under `scenarios/` next to the working directory.
fn resolve_scenario(arg: &str) -> Option<PathBuf> {
    let candidates = [
        PathBuf::from(arg),
        PathBuf::from(format!("{arg}.toml")),
        Path::new("scenarios").join(arg),
        Path::new("scenarios").join(format!("{arg}.toml")),
    ];
    candidates.into_iter().find(|p| p.is_file())
}

fn run(cli: &Cli) -> Result<(), (u8, Error)> {
    let path = resolve_scenario(&cli.scenario).ok_or_else(|| {
        (1, Error::config(format!("scenario `{}` not found", cli.scenario)))
    })?;
    let scenario = Scenario::from_file(&path).map_err(|e| (1, e))?;
    let options = RunOptions {
        parallel: cli.parallel,
        dump_frames: cli.dump_frames,
        frames_override: cli.frames,
        seed_override: cli.seed,
    };
    let result = run_sweep(&scenario, &options).map_err(|e| match e {
        e @ (Error::Validation { .. } | Error::Config(_)) => (1, e),
        e => (2, e),
    })?;
    let out_dir = cli
        .output
        .clone()
        .or_else(|| scenario.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    write_outputs(&out_dir, &scenario, &options, &result).map_err(|e| (2, e))?;

    for point in &result.points {
        for l in &point.links {
            println!(
                "value={:<10} link={:<12} fer={:.4e} ber={:.4e} tput={:.3} Mbit/s",
                point.sweep_value,
                l.link_id,
                l.fer.mean,
                l.ber.mean,
                l.throughput_bps.mean / 1e6,
            );
        }
    }
    println!("results written to {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
