use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lqrl::learner::Algorithm;

mod commands;
mod config;
mod error;
mod output;
mod plot;

use commands::ExperimentSpec;
use error::CliError;

/// Experiment harness for episodic linear-quadratic learning with relaxed
/// Gaussian policies.
#[derive(Debug, Parser)]
#[command(name = "lqrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment file (flat `key = value`); defaults to the benchmark.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for CSV and SVG files.
    #[arg(long, global = true, env = "LQRL_DEFAULT_OUT", default_value = "out", value_name = "DIR")]
    out: PathBuf,

    /// Comma-separated master seeds, e.g. "1,2,3".
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Number of independent learning runs.
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Episodes per learning run.
    #[arg(long, global = true)]
    episodes: Option<usize>,

    /// Execution intervals per episode.
    #[arg(long, global = true)]
    exec_steps: Option<usize>,

    /// Noise draws per mesh in the execution-gap study.
    #[arg(long, global = true, default_value_t = 100_000)]
    draws: usize,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    parallel: Option<usize>,

    /// Also write SVG charts.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Riccati solver against closed forms, with an RK4 order study.
    RiccatiCheck {
        /// Step counts for the order study; bare flag uses the default sweep.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        dt_sweep: Option<Vec<usize>>,
    },
    /// Bias of repeating one noise draw across all times.
    RepetitionBias {
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        lambda: f64,
        /// RK4 steps per agent.
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Exact execution gaps over a ladder of meshes.
    ExecutionGap {
        /// Moment-ODE steps; a multiple of the finest mesh.
        #[arg(long, default_value_t = 1024)]
        ode_steps: usize,
        /// Multiplies the policy standard deviation.
        #[arg(long, default_value_t = 1.0)]
        lambda_scale: f64,
    },
    /// Learning runs with the exploration-reward algorithm.
    RunAlg1,
    /// Learning runs with the proximal-update algorithm.
    RunAlg2,
    /// Regenerates charts from the CSV files in the output directory.
    Replot,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let spec = ExperimentSpec {
        config: cli.config,
        out: cli.out,
        seeds: cli.seeds,
        runs: cli.runs,
        episodes: cli.episodes,
        exec_steps: cli.exec_steps,
        plot: cli.plot,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(p) = cli.parallel {
        if p == 0 {
            return Err(CliError::Validation("--parallel must be positive".into()));
        }
        pool = pool.num_threads(p);
    }
    let pool = pool.build().map_err(CliError::validation)?;
    pool.install(|| match cli.command {
        Command::RiccatiCheck { dt_sweep } => commands::cmd_riccati_check(&spec, dt_sweep),
        Command::RepetitionBias { mu, lambda, steps } => {
            commands::cmd_repetition_bias(&spec, mu, lambda, steps)
        }
        Command::ExecutionGap {
            ode_steps,
            lambda_scale,
        } => commands::cmd_execution_gap(&spec, cli.draws, ode_steps, lambda_scale),
        Command::RunAlg1 => commands::cmd_run(&spec, Algorithm::ExplorationReward),
        Command::RunAlg2 => commands::cmd_run(&spec, Algorithm::ProximalUpdate),
        Command::Replot => commands::cmd_replot(&spec.out),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
