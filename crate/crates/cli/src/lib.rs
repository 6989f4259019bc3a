//! Batch front end: simulate the microgrid, certify subsystems and
//! networks from trajectory files, and reproduce the case study.

pub mod commands;
pub mod exit;
pub mod files;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dissipacert::network::CostSelector;

pub const THREADS_ENV: &str = "DISSIPACERT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dissipacert", version, about = "Data-driven dissipativity and network stability certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a microgrid scenario and export per-area trajectories.
    Simulate(SimulateArgs),
    /// Identify one subsystem from a trajectory file and certify a supply rate.
    CertifySubsystem(SubsystemArgs),
    /// Certify an interconnection from a dataset directory and a graph file.
    CertifyNetwork(NetworkArgs),
    /// Run the three fault scenarios end to end and compare index signs.
    ReproduceCaseStudy(CaseStudyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the dither seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SubsystemArgs {
    /// Trajectory CSV of one subsystem.
    #[arg(long)]
    pub traj: PathBuf,
    /// Lag ℓ; taken from the dataset manifest when omitted.
    #[arg(long)]
    pub lag: Option<usize>,
    /// State dimension n; taken from the dataset manifest when omitted.
    #[arg(long)]
    pub order: Option<usize>,
    /// Supply-rate JSON (`{"rho": [..], "nu": [..]}` or `{"q", "s", "r"}`), or `optimize`.
    #[arg(long)]
    pub supply: String,
    /// Certificate JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Rank tolerance; defaults to the manifest value, else 1e-8.
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Dataset directory holding `manifest.json` and the trajectory files.
    #[arg(long)]
    pub dir: PathBuf,
    /// Pairing list (JSON, 1-based).
    #[arg(long)]
    pub graph: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = dissipacert::network::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value_t = Cost::MaxminRho)]
    pub cost: Cost,
    /// Rank tolerance; defaults to the manifest value, else 1e-8.
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = dissipacert::network::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value_t = Cost::MaxminRho)]
    pub cost: Cost,
    /// Rank tolerance for identification.
    #[arg(long, default_value_t = dissipacert::microgrid::CASE_STUDY_REL_TOL)]
    pub rel_tol: f64,
    /// Dither seed (dither is off unless configured, so verdicts do not depend on it).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also report per-entry deltas against the reference index table.
    #[arg(long)]
    pub strict_values: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Cost {
    SumAll,
    MaxminRho,
    SumRho,
}

impl From<Cost> for CostSelector {
    fn from(c: Cost) -> Self {
        match c {
            Cost::SumAll => CostSelector::SumAll,
            Cost::MaxminRho => CostSelector::MaxMinRho,
            Cost::SumRho => CostSelector::SumRho,
        }
    }
}

/// Worker pool capped by `DISSIPACERT_THREADS` when set.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().expect("thread pool")
}

/// Parses arguments and runs one command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => exit::ExitKind::Input.code(),
            };
        }
    };
    let echo: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(&a, echo),
        Command::CertifySubsystem(a) => commands::subsystem::run(&a, echo),
        Command::CertifyNetwork(a) => commands::network::run(&a, echo),
        Command::ReproduceCaseStudy(a) => commands::case_study::run(&a, echo),
    }
}
