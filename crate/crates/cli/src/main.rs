mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mribench_core::ErrorKind;

#[derive(Parser)]
#[command(name = "mribench", version, about = "Brain-tumor MRI classification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a class-per-directory dataset and write the stratified split CSV.
    Prepare {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Split CSV to write; a JSON summary is written next to it.
        #[arg(long, default_value = "splits.csv")]
        out: PathBuf,
    },
    /// Train one model configuration into runs/<model>-<hash>/.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a run's best checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Print the comparison table for evaluated runs and write it as CSV.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison.csv")]
        out: PathBuf,
    },
    /// Plot a run's loss and accuracy curves.
    Curves {
        #[arg(long)]
        run: PathBuf,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Runtime => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Prepare { root, seed, out } => commands::prepare(&root, seed, &out),
        Command::Train { model, config } => commands::train(&model, &config),
        Command::Evaluate { run } => commands::evaluate(&run),
        Command::Compare { runs, out } => commands::compare(&runs, &out),
        Command::Curves { run, out } => commands::curves(&run, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
