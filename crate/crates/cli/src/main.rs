use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gqlab", version, about = "Run GQ(sigma, lambda) experiments and inspect closed-form models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configuration in a TOML experiment file.
    Run { config: PathBuf },
    /// Recompute the summary of a results directory.
    Summarize { dir: PathBuf },
    /// Print A, b, the fixed point and the spectrum of a finite problem
    /// (counterexample, baird, boyan, or a model file).
    Oracle {
        mdp: String,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        lambda: f64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let report =
                gqlab_cli::run_config_file(&config).with_context(|| format!("running {}", config.display()))?;
            print!("{}", report.summary);
            println!("results written to {}", report.output_dir.display());
        }
        Command::Summarize { dir } => {
            let summary = gqlab_cli::summarize_dir(&dir).with_context(|| format!("summarizing {}", dir.display()))?;
            print!("{summary}");
        }
        Command::Oracle { mdp, sigma, lambda } => {
            print!("{}", gqlab_cli::oracle_report(&mdp, sigma, lambda)?);
        }
    }
    Ok(())
}
