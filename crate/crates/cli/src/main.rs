use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dlsim_cli::{cmd_report, cmd_run, cmd_sweep, init_threads, parse_values, CliError};

#[derive(Parser)]
#[command(name = "dlsim", version, about = "Decentralized learning simulator with similarity-guided peer sampling")]
struct Cli {
    /// Worker threads (also read from DLSIM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override a config key, e.g. `--set tau=0`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Added to all three base seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every method at each value of one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of tau, train_size, num_neighbors.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Join the result tables of several run directories.
    Report {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Run {
            config,
            out,
            overrides,
            seed,
        } => {
            let dir = cmd_run(&config, &out, &overrides, seed)?;
            println!("{}", dir.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            overrides,
            seed,
        } => {
            let values = parse_values(&values)?;
            let dir = cmd_sweep(&config, &axis, &values, &out, &overrides, seed)?;
            println!("{}", dir.display());
        }
        Command::Report { out, run_dirs } => {
            cmd_report(&run_dirs, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
