use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pbcore::synth::Profile;
use pbcore_cli::commands::{error_json, resolve_out_dir, OUT_DIR_ENV};
use pbcore_cli::{run_command, Command, Invocation, SolveMethod};

#[derive(Parser)]
#[command(
    name = "pbcore",
    version,
    about = "Fair participatory budget allocations"
)]
struct Cli {
    /// Ballot CSV: `voter_id` then one column per item.
    #[arg(long, global = true)]
    votes: Option<PathBuf>,
    /// Election configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and artifacts.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Seed overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Potential,
    ProportionalFairness,
    Sgd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ballot file and matching configuration.
    Gen {
        /// disjoint-groups, independent-bernoulli(p), block-correlated,
        /// bare-majority, shared-item, lone-dissenter, free-rider, opposed-pair,
        /// k-approval(a) or boston.
        #[arg(long)]
        profile: Profile,
        #[arg(long, default_value_t = 100)]
        voters: usize,
        #[arg(long, default_value_t = 5)]
        items: usize,
    },
    /// Compute a Lindahl equilibrium and its core certificate.
    Solve {
        #[arg(long, value_enum, default_value_t = Method::Potential)]
        method: Method,
    },
    /// Run the saturating-utility heuristic and write its convergence trace.
    SolveSat,
    /// Search for a blocking coalition against an allocation.
    CheckCore {
        /// JSON array, allocation object or earlier run report.
        #[arg(long)]
        allocation: PathBuf,
        /// Check an integral allocation with the subset oracle.
        #[arg(long)]
        integral: bool,
    },
    /// Sample the approximately truthful mechanism.
    Mechanism,
    /// Compare core and welfare rankings and write the comparison table.
    Compare,
    /// Test pairwise independence of approvals and cluster the items.
    Analyze,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Gen {
            profile,
            voters,
            items,
        } => Command::Gen {
            profile,
            voters,
            items,
        },
        Cmd::Solve { method } => Command::Solve {
            method: match method {
                Method::Potential => SolveMethod::Potential,
                Method::ProportionalFairness => SolveMethod::ProportionalFairness,
                Method::Sgd => SolveMethod::Sgd,
            },
        },
        Cmd::SolveSat => Command::SolveSat,
        Cmd::CheckCore {
            allocation,
            integral,
        } => Command::CheckCore {
            allocation,
            integral,
        },
        Cmd::Mechanism => Command::Mechanism,
        Cmd::Compare => Command::Compare,
        Cmd::Analyze => Command::Analyze,
    };
    let inv = Invocation {
        command,
        votes: cli.votes,
        config: cli.config,
        out: resolve_out_dir(cli.out),
        seed: cli.seed,
    };
    match run_command(&inv) {
        Ok(report) => {
            println!("{}", report.to_json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
