use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rf_uda::Result;
use rf_uda_cli::config::parse_override;
use rf_uda_cli::{exit_code, run_ablation, run_eval, run_synth, run_train, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Train with unlabeled target data and write a checkpoint and epoch CSV.
    Train,
    /// Evaluate a checkpoint on the held-out target domain.
    Eval,
    /// Run the ablation grid and write ablation.csv.
    Ablate,
    /// Write the synthetic dataset to disk.
    Synth,
}

/// Unsupervised domain adaptation for RF gesture recognition.
#[derive(Debug, Parser)]
#[command(name = "rf-uda", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; overrides the `out` key.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<()> {
    let mut overrides = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(out) = &cli.out {
        overrides.push(("out".to_string(), out.display().to_string()));
    }
    let config = RunConfig::from_file(&cli.config, &overrides)?;
    let stdout = io::stdout();
    let mut progress = stdout.lock();
    match cli.command {
        Command::Train => {
            let outcome = run_train(&config, &mut progress)?;
            if let Some(e) = outcome.final_eval {
                eprintln!("final target accuracy {} over {} samples", e.accuracy, e.count);
            }
        }
        Command::Eval => {
            let report = run_eval(&config)?;
            let _ = writeln!(progress, "accuracy {} over {} samples", report.accuracy, report.count);
        }
        Command::Ablate => {
            for row in run_ablation(&config, &mut progress)? {
                let _ = writeln!(progress, "{}", row.csv_row());
            }
        }
        Command::Synth => {
            let data = run_synth(&config)?;
            let _ = writeln!(progress, "wrote {} samples to {}", data.len(), config.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
