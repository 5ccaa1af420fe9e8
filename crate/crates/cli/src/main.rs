use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tatt_cli::{run_command, CliError, Mode};

#[derive(Parser)]
#[command(name = "tatt", version, about = "Regional effect estimation with transfer-learned outcome models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated simulation study with bias, RMSE and coverage tables.
    Simulate(RunArgs),
    /// Effect and potential-outcome estimates on a CSV file.
    Estimate(RunArgs),
    /// Leave-one-center-out re-estimation for one target region.
    Sensitivity(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML study config, or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Master seed; overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn fail(err: &CliError) -> ExitCode {
    let record = serde_json::to_string(&err.record()).unwrap_or_else(|_| err.to_string());
    eprintln!("{record}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.render().to_string().trim().to_string());
            return fail(&err);
        }
    };
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Estimate(a) => (Mode::Estimate, a),
        Command::Sensitivity(a) => (Mode::Sensitivity, a),
    };
    match run_command(mode, args.config.as_deref(), args.seed, args.threads, args.output_dir) {
        Ok(outcome) => {
            let summary = serde_json::json!({
                "mode": mode.as_str(),
                "output_dir": outcome.output_dir,
                "outputs": outcome.manifest.outputs.iter().map(|o| &o.file).collect::<Vec<_>>(),
                "flagged_failures": outcome.manifest.flagged_failures,
            });
            println!("{summary}");
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}
