mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nonunique::model::Interval;

use config::{parse_interval, Overrides, RunConfig};

/// Free energy experiments for a sigmoid regression with two optimal parameters.
#[derive(Debug, Parser)]
#[command(name = "nonunique", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON configuration; model fields at the top level, plus optional
    /// `plan`, `search`, `clt` and `monte_carlo` sections.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Cache directory for optima and coefficients [default: OUT/cache].
    #[arg(long, global = true, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Master seed of the replication streams.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Inverse temperature.
    #[arg(long, global = true, value_name = "F")]
    beta: Option<f64>,
    /// Replications per sample size (experiment) or in total (clt).
    #[arg(long, global = true, value_name = "N")]
    replications: Option<usize>,
    /// Comma-separated sample sizes, e.g. 100,200,300.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    /// Prior range of the slope, LO,HI.
    #[arg(long, global = true, value_name = "LO,HI", value_parser = parse_interval, allow_hyphen_values = true)]
    prior_a: Option<Interval>,
    /// Prior range of the intercept, LO,HI.
    #[arg(long, global = true, value_name = "LO,HI", value_parser = parse_interval, allow_hyphen_values = true)]
    prior_b: Option<Interval>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Locate the optimal parameters and write optima.json.
    Optima,
    /// Write coefficients.json and the predicted curves in theory.csv.
    Theory,
    /// Replicate the free energy over the sample sizes; writes runs.csv, summary.csv and fit.json.
    Experiment,
    /// Compare the scaled log-loss fluctuations with their Gaussian limit; writes clt.json.
    Clt {
        /// Sample size of each replication.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let clt_n = match cli.command {
        Command::Clt { n } => n,
        _ => None,
    };
    let g = cli.global;
    let rc = RunConfig::resolve(
        g.config.as_deref(),
        g.out,
        g.cache,
        Overrides {
            seed: g.seed,
            beta: g.beta,
            replications: g.replications,
            sample_sizes: g.sample_sizes,
            prior_a: g.prior_a,
            prior_b: g.prior_b,
            clt_n,
        },
    )?;
    match cli.command {
        Command::Optima => commands::optima(&rc),
        Command::Theory => commands::theory(&rc),
        Command::Experiment => commands::experiment(&rc),
        Command::Clt { .. } => commands::clt(&rc),
    }
}
