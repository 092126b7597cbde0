//! Command-line experiment runner.
//!
//! `thcf run` executes a Monte Carlo sweep over schemes, sweep values and
//! seeds, and writes the result table as CSV or JSON lines.
//!
//! Exit codes: 0 on full success, 1 on configuration errors, 2 when some
//! grid cells failed but the sweep completed.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use thcf_sim::harness::{
    emit_results, run_sweep, ExperimentConfig, SweepParameter,
};

#[derive(Parser)]
#[command(name = "thcf", version, about = "C-RAN uplink fronthaul-compression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and write the result table.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration preset.
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Restrict to these schemes (repeatable or comma-separated).
    #[arg(long = "scheme", value_delimiter = ',')]
    schemes: Vec<String>,
    /// Sweep specification: <parameter>=v1,v2,... or "none".
    #[arg(long)]
    sweep: Option<String>,
    /// Override the seed list (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Override the output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the output format.
    #[arg(long, value_parser = ["csv", "jsonl"])]
    format: Option<String>,
}

fn build_config(args: &RunArgs) -> thcf_sim::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(thcf_sim::Error::Config(
                "pass --config <path> or --preset desk|paper".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    };
    if !args.schemes.is_empty() {
        cfg.experiment.schemes = args.schemes.clone();
    }
    if let Some(spec) = &args.sweep {
        if spec == "none" {
            cfg.experiment.sweep_parameter = SweepParameter::None;
            cfg.experiment.sweep_values.clear();
        } else {
            let (param, values) = spec.split_once('=').ok_or_else(|| {
                thcf_sim::Error::Config(format!(
                    "sweep specification '{spec}' must look like <parameter>=v1,v2,..."
                ))
            })?;
            cfg.experiment.sweep_parameter = param.parse()?;
            cfg.experiment.sweep_values = values
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        thcf_sim::Error::Config(format!("bad sweep value '{v}'"))
                    })
                })
                .collect::<thcf_sim::Result<Vec<_>>>()?;
        }
    }
    if !args.seeds.is_empty() {
        cfg.experiment.seeds = args.seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.experiment.output_path = out.display().to_string();
    }
    if let Some(format) = &args.format {
        cfg.experiment.format = format.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> i32 {
    let cfg = match build_config(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 1;
        }
    };
    let table = match run_sweep(&cfg) {
        Ok(table) => table,
        Err(e) => {
            eprintln!("sweep failed: {e}");
            return 1;
        }
    };
    for failure in &table.failures {
        eprintln!(
            "row failed: scheme={} sweep_value={:?} seed={}: {}",
            failure.scheme, failure.sweep_value, failure.seed, failure.message
        );
    }
    if table.rows.is_empty() {
        eprintln!("no rows succeeded");
        return 2;
    }
    let path = PathBuf::from(&cfg.experiment.output_path);
    if let Err(e) = emit_results(&table, &path, cfg.experiment.format) {
        eprintln!("failed to write results: {e}");
        return 1;
    }
    println!(
        "wrote {} rows to {} ({} failed cells)",
        table.rows.len(),
        path.display(),
        table.failures.len()
    );
    if table.failures.is_empty() {
        0
    } else {
        2
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(args) => run(args),
    };
    std::process::exit(code);
}
