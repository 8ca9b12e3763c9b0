use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use decoupler_cli::commands;
use decoupler_cli::config::ExperimentConfig;

/// Fits per-node predictive models over a causal DAG, decouples flagged
/// edges via reference points searched to the benefit of a declared
/// subgroup, and audits how outcome-constrained baselines distort neutral
/// mechanisms.
#[derive(Parser)]
#[command(name = "decoupler", version, about)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "decoupler.toml")]
    config: PathBuf,
    /// Output directory (overrides DECOUPLER_OUT_DIR and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the linear structural-equation simulator.
    Simulate,
    /// Validate and normalize a CSV file against the declared schema.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit one local module per non-root node, without fairness constraints.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Search reference points for the flagged edges and report subgroup and
    /// group-level effects.
    Decouple {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Constrained-baseline audit: path-combination effects, deviation
    /// matrices, threshold sweep, approval rates.
    Audit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score rows through the bundle, optionally with a reference-point map.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        refmap: Option<PathBuf>,
        /// Also write the per-row, per-node propagation trace.
        #[arg(long)]
        trace: bool,
    },
    /// Parameter/MAC counts and forward-pass timing on a random DAG.
    BenchScale,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&config, out),
        Command::Ingest { data } => commands::cmd_ingest(&config, &data, out),
        Command::Fit { data } => commands::cmd_fit(&config, &data, out),
        Command::Decouple { data, bundle } => commands::cmd_decouple(&config, &data, &bundle, out),
        Command::Audit { data } => commands::cmd_audit(&config, &data, out),
        Command::Predict { data, bundle, refmap, trace } => {
            commands::cmd_predict(&config, &data, &bundle, refmap.as_deref(), trace, out)
        }
        Command::BenchScale => commands::cmd_bench_scale(&config, out),
    }
}
