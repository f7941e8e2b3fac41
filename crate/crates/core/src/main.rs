use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use symloss::experiment::{
    format_probe, format_report, load_config, probe_symmetry_cmd, run_sweep, verify_theorem1_cmd, CellOutcome,
    Overrides, VerifyArgs,
};
use symloss::{Error, LossSpec};

const USAGE: u8 = 1;
const NUMERICAL: u8 = 2;

#[derive(Parser)]
#[command(name = "symloss", version, about = "Label-noise experiments with symmetric losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (loss, eta) cell of a sweep and write CSVs.
    Run {
        /// TOML config; every key is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Losses to sweep, comma separated (cce, mse, mae, rll:<alpha>, norm-<loss>).
        #[arg(long, value_delimiter = ',')]
        loss: Option<Vec<String>>,
        /// Noise rates to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        eta: Option<Vec<f64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Hidden layer widths, comma separated.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// sgd or adam.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        step_size: Option<f64>,
    },
    /// Check the clean/noisy risk identity on random networks.
    VerifyTheorem1 {
        #[arg(long)]
        loss: LossSpec,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 20)]
        nets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate whether a loss sums to a constant over all labels.
    ProbeSymmetry {
        #[arg(long)]
        loss: LossSpec,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::DegeneratePrediction | Error::Geometry(_) => NUMERICAL,
        _ => USAGE,
    }
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            loss,
            eta,
            epochs,
            batch_size,
            hidden,
            optimizer,
            step_size,
        } => {
            let overrides = Overrides {
                out,
                seed,
                losses: loss,
                etas: eta,
                epochs,
                batch_size,
                hidden,
                optimizer,
                step_size,
            };
            let config = load_config(config.as_deref(), &overrides)?;
            let report = run_sweep(&config)?;
            for cell in &report.cells {
                match &cell.outcome {
                    CellOutcome::Completed {
                        final_j1,
                        final_j2,
                        epochs_to_99_j1,
                    } => println!(
                        "{:<12} eta {:<4} j1 {final_j1:.4} j2 {final_j2:.4} j1>=0.99 at {}",
                        cell.loss.to_string(),
                        cell.eta,
                        epochs_to_99_j1.map_or("never".into(), |e| format!("epoch {e}"))
                    ),
                    CellOutcome::Failed(msg) => {
                        println!("{:<12} eta {:<4} FAILED: {msg}", cell.loss.to_string(), cell.eta)
                    }
                }
            }
            println!("wrote {}", report.out.display());
            Ok(if report.failed() > 0 { NUMERICAL } else { 0 })
        }
        Command::VerifyTheorem1 {
            loss,
            k,
            eta,
            nets,
            seed,
        } => {
            let report = verify_theorem1_cmd(&VerifyArgs {
                loss,
                num_classes: k,
                eta,
                nets,
                seed,
            })?;
            print!("{}", format_report(&report));
            Ok(if report.symmetric() && !report.holds() {
                NUMERICAL
            } else {
                0
            })
        }
        Command::ProbeSymmetry { loss, k, trials, seed } => {
            let probe = probe_symmetry_cmd(&loss, k, trials, seed)?;
            print!("{}", format_probe(&loss, k, &probe));
            let expected = loss.symmetry_constant(k).is_some();
            Ok(if expected && !probe.symmetric { NUMERICAL } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
