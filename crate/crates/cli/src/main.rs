use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use genstore_cli::{cmd_bench, cmd_explore, cmd_journal, cmd_run, BenchConfig, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "genstore", version, about = "Run workloads against the generation-stamped fact store")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload script and check its expectations.
    Run {
        script: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        which: Bench,
    },
    /// Explore the interleavings of a script.
    Explore {
        script: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
    },
    /// Run a script with a journaling commit constraint and replay the journal.
    Journal {
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Concurrent transfers between accounts with a snapshot auditor.
    Bank {
        #[arg(long, default_value_t = 4)]
        threads: usize,
        #[arg(long, default_value_t = 16)]
        accounts: usize,
        /// Transfers per thread.
        #[arg(long, default_value_t = 1000)]
        transfers: usize,
        #[arg(long, default_value_t = 100)]
        initial_balance: i64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        gc: OnOff,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { script, json } => cmd_run(&script, json),
        Command::Explore { script, budget } => cmd_explore(&script, budget),
        Command::Journal { script, out } => cmd_journal(&script, &out),
        Command::Bench { which: Bench::Bank { threads, accounts, transfers, initial_balance, seed, gc } } => {
            cmd_bench(&BenchConfig { threads, accounts, transfers, initial_balance, seed, gc: matches!(gc, OnOff::On) })
        }
    };
    match result {
        Ok((code, text)) => {
            println!("{text}");
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("genstore: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
