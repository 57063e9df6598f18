//! Command-line driver for the simulate -> analyze -> report pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nsaf::analysis::Statement;
use nsaf::config::RunConfig;
use nsaf::pipeline::{cmd_analyze, cmd_identities, cmd_report, cmd_simulate, PipelineError};

#[derive(Parser)]
#[command(name = "nsaf", about = "2D Navier-Stokes vorticity lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured problem and persist snapshots
    Simulate {
        /// flat key = value config file
        #[arg(long)]
        config: PathBuf,
        /// run directory (default: runs/<config-hash>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute moments, profiles, residual slopes and identities
    Analyze {
        /// run directory produced by simulate
        #[arg(long)]
        run: PathBuf,
        /// semicolon-separated statement list; defaults to the config set
        #[arg(long)]
        statements: Option<String>,
    },
    /// Run only the identity battery
    Identities {
        #[arg(long)]
        run: PathBuf,
    },
    /// Re-emit stored reports as json, csv or svg
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(nsaf::config::ConfigError::Io)
        .map_err(PipelineError::Config)?;
    Ok(RunConfig::parse(&text)?)
}

fn run_config_of(run: &PathBuf) -> Result<RunConfig, PipelineError> {
    load_config(&run.join("config.txt"))
}

fn real_main() -> Result<(), PipelineError> {
    nsaf::init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..16]));
            cmd_simulate(&cfg, &dir)?;
            println!("simulated into {}", dir.display());
            Ok(())
        }
        Command::Analyze { run, statements } => {
            let cfg = run_config_of(&run)?;
            let list = statements.unwrap_or_else(|| cfg.statements.clone());
            let stmts = Statement::parse_list(&list)?;
            let reports = cmd_analyze(&cfg, &run, &stmts)?;
            for r in &reports {
                println!(
                    "{}: slope {:+.3} vs predicted {:+.3} (tol {:.2}) -> {}",
                    r.statement,
                    r.slope,
                    r.predicted,
                    r.tolerance,
                    if r.verdict { "pass" } else { "FAIL" }
                );
            }
            Ok(())
        }
        Command::Identities { run } => {
            let cfg = run_config_of(&run)?;
            let results = cmd_identities(&cfg, &run)?;
            for r in &results {
                println!(
                    "{}: measured {:.3e} tol {:.1e} -> {}",
                    r.id,
                    r.measured,
                    r.tolerance,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            Ok(())
        }
        Command::Report { run, format } => {
            let out = cmd_report(&run, &format)?;
            println!("{out}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
