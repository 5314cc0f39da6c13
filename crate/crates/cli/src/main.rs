use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Mean-field analysis and simulation of load balancing in server clusters.
#[derive(Parser, Debug)]
#[command(name = "lbmf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file
    #[arg(long)]
    pub config: PathBuf,

    /// Output directory, created if missing
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Simulation seed (overrides the config)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Policy such as random, jiq, jsq, jbt or jsqd:2 (overrides the config)
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean-field trajectory from an empty system, optionally with a simulated run
    Transient {
        #[command(flatten)]
        common: Common,
        /// Also simulate and write the trajectory next to the ODE one
        #[arg(long)]
        overlay_sim: bool,
        /// Number of servers for the simulated run
        #[arg(long)]
        n: Option<usize>,
    },
    /// Mean system time per policy and cluster size
    Table {
        #[command(flatten)]
        common: Common,
        /// Policies to tabulate (ignored when --policy is given)
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "random,jiq,jsqd:2,jsqd:5,jsq,jbt"
        )]
        policies: Vec<String>,
        /// Cluster sizes; `inf` is the mean-field limit
        #[arg(long, value_delimiter = ',', default_value = "inf")]
        n: Vec<String>,
        /// Simulation replications per finite cell
        #[arg(long, default_value_t = 8)]
        replications: usize,
    },
    /// System-time density from the mean-field limit, optionally with a histogram
    Dist {
        #[command(flatten)]
        common: Common,
        /// Last time point of the density grid
        #[arg(long, default_value_t = 15.0)]
        t_max: f64,
        /// Spacing of the density grid
        #[arg(long, default_value_t = 0.01)]
        t_step: f64,
        /// Histogram bin width
        #[arg(long, default_value_t = 0.25)]
        bin: f64,
        /// Simulate and write a histogram of sojourn times
        #[arg(long)]
        overlay_sim: bool,
        /// Number of servers for the simulated run
        #[arg(long)]
        n: Option<usize>,
    },
    /// Mean-field trajectories for several d next to the JSQ one
    JsqdSweep {
        #[command(flatten)]
        common: Common,
        /// Values of d
        #[arg(long, value_delimiter = ',', default_value = "2,5,20,100")]
        d: Vec<u32>,
    },
    /// Stationary point, loss and mean system time as JSON
    Stationary {
        #[command(flatten)]
        common: Common,
    },
    /// Checks a configuration
    Validate {
        /// JSON configuration file
        #[arg(long)]
        config: PathBuf,
    },
}

fn configure_threads() {
    let Some(n) = std::env::var("LBMF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    else {
        return;
    };
    if n > 0 {
        // Fails only if a pool exists already, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use lbmf_core::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite { .. } | Error::NonConvergence { .. }) => 2,
        Some(Error::Io(_) | Error::Csv(_)) => 3,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some()
            || err.downcast_ref::<csv::Error>().is_some() =>
        {
            3
        }
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Transient {
            common,
            overlay_sim,
            n,
        } => commands::transient(&common, overlay_sim, n),
        Command::Table {
            common,
            policies,
            n,
            replications,
        } => commands::table(&common, &policies, &n, replications),
        Command::Dist {
            common,
            t_max,
            t_step,
            bin,
            overlay_sim,
            n,
        } => commands::dist(&common, t_max, t_step, bin, overlay_sim, n),
        Command::JsqdSweep { common, d } => commands::jsqd_sweep(&common, &d),
        Command::Stationary { common } => commands::stationary(&common),
        Command::Validate { config } => commands::validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
