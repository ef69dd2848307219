//! `countcon`: train count-constrained regression networks from config files.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use countcon::data::{self, CsvOptions};
use countcon::experiment::{self, RunArtifacts, RunConfig, OUTPUT_ROOT_ENV};
use countcon::metrics::{assemble_table, emit_curve};
use countcon::selfcheck::{self, Faults};
use countcon::{Checkpoint, Error};

#[derive(Parser)]
#[command(name = "countcon", version, about = "Regression under a count constraint")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed from a TOML config.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Print the resolved configuration and exit without training.
        #[arg(long)]
        print_config: bool,
    },
    /// Motorcycle data, canonical network, MSE: percentile constraints plus
    /// the unconstrained fit, across seeds, assembled into one table.
    ReproduceMotorcycle {
        #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "runs/motorcycle")]
        output_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "10,25,75,90")]
        percentiles: Vec<f64>,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Gradient, pinball and alternation checks against independent oracles.
    Selfcheck {
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_gradient_fault: f64,
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_pinball_fault: f64,
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_distance_fault: f64,
    },
    /// Evaluate a checkpoint on an even grid over a dataset's input range.
    EmitCurve {
        checkpoint: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        grid: usize,
        /// Dataset CSV; the bundled motorcycle data when absent.
        #[arg(long, requires = "target_column")]
        data: Option<PathBuf>,
        #[arg(long)]
        target_column: Option<String>,
    },
    /// Print a fully resolved configuration: the given file with defaults
    /// filled in, or the motorcycle setup.
    PrintConfig {
        config: Option<PathBuf>,
        /// Motorcycle setup at this percentile (unconstrained when absent).
        #[arg(long, conflicts_with = "config")]
        percentile: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seeds) = &self.seeds {
            cfg.seeds.clone_from(seeds);
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn exit_code(err: &Error) -> ExitCode {
    ExitCode::from(if err.is_config_error() { 2 } else { 1 })
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    exit_code(&err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            overrides,
            print_config,
        } => train(&config, &overrides, print_config),
        Command::ReproduceMotorcycle {
            output_dir,
            seeds,
            percentiles,
            jobs,
        } => reproduce(&output_dir, &seeds, &percentiles, jobs),
        Command::Selfcheck {
            inject_gradient_fault,
            inject_pinball_fault,
            inject_distance_fault,
        } => run_selfcheck(&Faults {
            gradient: inject_gradient_fault,
            pinball: inject_pinball_fault,
            distance: inject_distance_fault,
        }),
        Command::EmitCurve {
            checkpoint,
            out,
            grid,
            data,
            target_column,
        } => curve(&checkpoint, &out, grid, data.as_deref(), target_column.as_deref()),
        Command::PrintConfig {
            config,
            percentile,
            overrides,
        } => {
            let mut cfg = match config {
                Some(path) => match RunConfig::load(&path) {
                    Ok(c) => c,
                    Err(e) => return fail(e),
                },
                None => RunConfig::motorcycle(percentile, vec![1]),
            };
            overrides.apply(&mut cfg);
            print!("{}", cfg.to_toml());
            ExitCode::SUCCESS
        }
    }
}

fn train(path: &Path, overrides: &Overrides, print_config: bool) -> ExitCode {
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    overrides.apply(&mut cfg);
    if print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let root = cfg.resolved_output_dir();
    match experiment::run_config(&cfg, Some(&root), overrides.jobs) {
        Ok(results) => summarize(&cfg.seeds, results, &root).0,
        Err(e) => fail(e),
    }
}

/// Prints one line per run; the exit code is 0 iff every run finished with
/// its constraint satisfied.
fn summarize(seeds: &[u64], results: Vec<countcon::Result<RunArtifacts>>, root: &Path) -> (ExitCode, Vec<RunArtifacts>) {
    let mut ok = true;
    let mut done = Vec::new();
    for (seed, result) in seeds.iter().zip(results) {
        match result {
            Ok(art) => {
                let r = &art.report;
                ok &= r.constraint_satisfied;
                println!(
                    "{label} seed {seed}: count {count}{target} rmse {rmse:.4} rounds {rounds} -> {dir}",
                    label = r.label,
                    count = r.achieved_count,
                    target = match (r.m, r.delta) {
                        (Some(m), Some(d)) => format!(" (target {m} ± {d})"),
                        _ => String::new(),
                    },
                    rmse = r.rmse,
                    rounds = r.distances.len(),
                    dir = root.join(format!("{}-seed{seed}", r.label)).display(),
                );
                done.push(art);
            }
            Err(e) => {
                ok = false;
                eprintln!("seed {seed}: error: {e}");
            }
        }
    }
    (if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }, done)
}

fn reproduce(output_dir: &Path, seeds: &[u64], percentiles: &[f64], jobs: usize) -> ExitCode {
    let configs = experiment::motorcycle_suite(seeds, percentiles);
    let results = match experiment::run_suite(&configs, Some(output_dir), jobs) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let all_seeds: Vec<u64> = configs.iter().flat_map(|c| c.seeds.clone()).collect();
    let (code, done) = summarize(&all_seeds, results, output_dir);
    let reports: Vec<_> = done.into_iter().map(|a| a.report).collect();
    let table = assemble_table(&reports);
    if let Err(e) = table.write(output_dir) {
        return fail(e);
    }
    println!();
    print!("{}", table.to_text());
    code
}

fn run_selfcheck(faults: &Faults) -> ExitCode {
    let mut failed = Vec::new();
    for r in selfcheck::run_all(faults) {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

fn curve(checkpoint: &Path, out: &Path, grid: usize, data_path: Option<&Path>, target: Option<&str>) -> ExitCode {
    let result = (|| {
        let ckpt = Checkpoint::load(checkpoint)?;
        let net = ckpt.to_network()?;
        let raw = match (data_path, target) {
            (Some(path), Some(col)) => {
                if !path.is_file() {
                    return Err(Error::config(
                        "data",
                        format!("dataset file {} does not exist", path.display()),
                    ));
                }
                data::load_csv_with(path, col, &CsvOptions::default())?
            }
            _ => data::motorcycle(),
        };
        let ds = match ckpt.normalization {
            Some(norm) => raw.with_normalization(norm)?,
            None => raw,
        };
        emit_curve(&net, &ds, grid, out)
    })();
    match result {
        Ok(points) => {
            println!("wrote {} points to {}", points.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
