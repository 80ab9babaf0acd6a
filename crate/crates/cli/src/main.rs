use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod cluster;
mod sim;

#[derive(Parser)]
#[command(
    name = "wavedag",
    version,
    about = "wavedag simulations, walkthrough and local clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator and write one CSV row per seed.
    Sim(SimArgs),
    /// Replay the annotated example DAG and check its commit sequence.
    Walkthrough,
    /// Run one validator of a TCP cluster with a load generator.
    Cluster(ClusterArgs),
    /// Print a cluster config for `n` validators on consecutive local ports.
    LocalConfig(LocalConfigArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchedulerKind {
    Sync,
    Random,
    Adversarial,
}

#[derive(Args, Clone, Debug)]
pub struct SimArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Validators crashed before round 1.
    #[arg(long, default_value_t = 0)]
    pub faults: usize,
    /// Validators that equivocate (two blocks per round).
    #[arg(long, default_value_t = 0)]
    pub byzantine: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(3..=5))]
    pub wave: u64,
    #[arg(long, default_value_t = 1)]
    pub leaders: usize,
    #[arg(long, value_enum, default_value_t = SchedulerKind::Sync)]
    pub scheduler: SchedulerKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of consecutive seeds to run, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 200)]
    pub rounds: u64,
    /// Waves to sample for `--estimate-commit-rate`.
    #[arg(long, requires = "estimate_commit_rate")]
    pub waves: Option<u64>,
    /// Transactions per validator per time unit.
    #[arg(long, default_value_t = 1)]
    pub load: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Measure the per-wave direct-commit rate against its lower bound
    /// instead of running a single simulation.
    #[arg(long)]
    pub estimate_commit_rate: bool,
}

#[derive(Args, Clone, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub id: u16,
    #[arg(long, default_value_t = 60)]
    pub duration_secs: u64,
    /// Transactions per second.
    #[arg(long, default_value_t = 1_000)]
    pub rate: u64,
    #[arg(long, default_value_t = 64)]
    pub tx_size: usize,
    #[arg(long, default_value_t = 5_000)]
    pub resubmit_ms: u64,
    /// Write-ahead log; restarting with the same file recovers the node.
    #[arg(long)]
    pub wal: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct LocalConfigArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 7000)]
    pub base_port: u16,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub wave: u64,
    #[arg(long, default_value_t = 1)]
    pub leaders: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(args) => sim::run(&args),
        Command::Walkthrough => {
            let walkthrough = wavedag_sim::walkthrough::run_walkthrough();
            print!("{}", walkthrough.render());
            Ok(walkthrough.matches_expected())
        }
        Command::Cluster(args) => cluster::run(&args),
        Command::LocalConfig(args) => cluster::local_config(&args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
