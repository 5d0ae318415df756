//! Command-line driver: `simulate`, `sweep`, `oracle`, `validate`, `version`.

pub mod checks;
pub mod config;
pub mod output;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use unravel_core::Unraveling;

use crate::config::{read_json, RunConfig, SweepConfig};

/// Exit status 1 is a runtime failure, 2 a configuration problem.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Runtime(_) => 1,
            Self::Config(_) => 2,
        }
    }
}

impl From<unravel_core::Error> for CliError {
    fn from(e: unravel_core::Error) -> Self {
        match e {
            unravel_core::Error::InvalidParams(m) => Self::Config(m),
            other => Self::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "unravel", version, about = "Quantum trajectories of the monitored transverse-field Ising chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one trajectory ensemble.
    Simulate(SimulateArgs),
    /// Run a (gamma, h_f, L) grid and fit the size scaling.
    Sweep(SweepArgs),
    /// Cross-checks against exact small-system references.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Fast invariant suite.
    Validate {
        #[arg(long)]
        quick: bool,
    },
    /// Print the version.
    Version,
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Trajectory ensembles against the master equation.
    Crosscheck {
        #[arg(long = "L", default_value_t = 4)]
        sites: usize,
        #[arg(long, default_value_t = 2000)]
        n_traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Default)]
struct SimulateArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    unraveling: Option<Unraveling>,
    #[arg(long = "L")]
    sites: Option<usize>,
    #[arg(long = "hf")]
    field: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "J")]
    coupling: Option<f64>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    record_interval: Option<f64>,
    #[arg(long)]
    t_star: Option<f64>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also record square correlations.
    #[arg(long)]
    correlations: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON sweep configuration with `run`, `gammas`, `fields` and `sizes`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl SimulateArgs {
    fn apply(&self, mut c: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(unraveling => unraveling, sites => sites, field => field, gamma => gamma, alpha => alpha,
             coupling => coupling, n_traj => n_traj, t_max => t_max, record_interval => record_interval,
             seed => seed, checkpoint_every => checkpoint_every);
        if self.dt.is_some() {
            c.dt = self.dt;
        }
        if self.t_star.is_some() {
            c.t_star = self.t_star;
        }
        if self.ell.is_some() {
            c.subsystem = self.ell;
        }
        if self.correlations {
            c.record_correlations = true;
        }
        c
    }
}

fn print_outcomes(outcomes: &[checks::CheckOutcome]) -> Result<(), CliError> {
    for o in outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("failed checks: {}", failed.join(", "))))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let base = match &args.config {
                Some(path) => read_json(path)?,
                None => RunConfig::default(),
            };
            run::simulate(&args.apply(base), &args.out)
        }
        Command::Sweep(args) => {
            let config: SweepConfig = read_json(&args.config)?;
            for summary in run::sweep(&config, &args.out)? {
                match summary.crossover {
                    Some(c) => match (c.field, c.error) {
                        (Some(h), Some(e)) => {
                            println!("gamma {}: h_c = {h:.4} ± {e:.4} (L_max {})", summary.gamma, c.l_max)
                        }
                        _ => println!("gamma {}: {} (L_max {})", summary.gamma, c.verdict.label(), c.l_max),
                    },
                    None => println!("gamma {}: insufficient-sizes", summary.gamma),
                }
            }
            Ok(())
        }
        Command::Oracle { command: OracleCommand::Crosscheck { sites, n_traj, seed } } => {
            if !(2..=8).contains(&sites) || sites % 2 != 0 || n_traj < 2 {
                return Err(CliError::Config(format!("crosscheck needs even L in 2..=8 and n_traj >= 2, got L={sites}, n_traj={n_traj}")));
            }
            print_outcomes(&checks::lindblad_consistency(sites, n_traj, seed))
        }
        Command::Validate { quick } => print_outcomes(&checks::validate_suite(quick)),
        Command::Version => {
            println!("unravel {}", output::VERSION);
            Ok(())
        }
    }
}

/// Worker threads from `UNRAVEL_THREADS`, defaulting to every core.
fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var("UNRAVEL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("UNRAVEL_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(cli)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("unravel: {e}");
            e.exit_code()
        }
    }
}
