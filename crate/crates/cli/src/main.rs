//! Command-line front end: `hexmesh run <scenario>` executes a scenario
//! file, `hexmesh bench-paths` times the router without one.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hexmesh::graph::WeightCoeffs;
use hexmesh::topology::{generate_hex_mesh, load_topology, PucDefaults};
use hexmesh_cli::bench::bench_paths;
use hexmesh_cli::{run_scenario, CliError, RunOptions};

#[derive(Parser)]
#[command(
    name = "hexmesh",
    about = "Experiment runner for programmable hexagonal photonic meshes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its results directory.
    Run(RunArgs),
    /// Time shortest-path routing over seeded random port pairs.
    BenchPaths(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Results directory (default: $HEXMESH_OUT or ./hexmesh-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's seed (randomized commands only).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for permutation sweeps (default: all cores, max 8).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Topology: `RxC` generator dimensions (e.g. `5x3`) or a JSON file.
    #[arg(long, default_value = "5x3")]
    topology: String,
    /// Number of random pairs to route.
    #[arg(long, default_value_t = 400)]
    n: u32,
    /// RNG seed for pair selection.
    #[arg(long)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let options = RunOptions {
                out_dir: args.out,
                seed: args.seed,
                threads: args.threads,
            };
            let outcome = run_scenario(&args.scenario, &options)?;
            println!("results written to {}", outcome.out_dir.display());
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.summary).expect("summary serializes")
            );
            Ok(())
        }
        Command::BenchPaths(args) => {
            let topology = if let Some((rows, cols)) = parse_dims(&args.topology) {
                generate_hex_mesh(rows, cols, &PucDefaults::default())
                    .map_err(CliError::from)?
            } else {
                load_topology(std::path::Path::new(&args.topology)).map_err(CliError::from)?
            };
            let report = bench_paths(&topology, WeightCoeffs::default(), args.n, args.seed)?;
            let t = &report.routing;
            println!("graph build: {:.2} us", report.graph_build_us);
            println!(
                "routing over {} paths: mean {:.3} us, median {:.3} us, p99 {:.3} us, min {:.3} us, max {:.3} us",
                t.count, t.mean_us, t.median_us, t.p99_us, t.min_us, t.max_us
            );
            let solved = report.outcomes.iter().filter(|o| o.is_some()).count();
            println!("solved {solved}/{} pairs", report.pairs.len());
            Ok(())
        }
    }
}

fn parse_dims(text: &str) -> Option<(u32, u32)> {
    let (rows, cols) = text.split_once(['x', 'X'])?;
    Some((rows.trim().parse().ok()?, cols.trim().parse().ok()?))
}
