use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jumpreg::model::REGISTRY;
use jumpreg_cli::config::ExperimentConfig;
use jumpreg_cli::{run_with_workers, RunError};

#[derive(Parser)]
#[command(name = "jumpreg", version, about = "Run jump-diffusion control experiments and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments selected by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Configuration utilities.
    Config {
        /// Print the default configuration as JSON.
        #[arg(long)]
        print_defaults: bool,
    },
    /// List the built-in models and their parameters.
    ListModels,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => {
            let outcome = ExperimentConfig::load(&config).map_err(RunError::Config).and_then(|mut cfg| {
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(o) = out {
                    cfg.output_dir = o;
                }
                run_with_workers(&cfg, workers)
            });
            match outcome {
                Ok(report) => {
                    for c in &report.checks {
                        println!("{} {} measured={} expected={} tolerance={}", c.status(), c.name, c.measured, c.expected, c.tolerance);
                    }
                    let failed = report.checks.iter().filter(|c| !c.pass).count();
                    println!("{} checks, {failed} failed", report.checks.len());
                    ExitCode::from(report.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Config { print_defaults } => {
            if !print_defaults {
                eprintln!("error: nothing to do; pass --print-defaults");
                return ExitCode::from(2);
            }
            println!("{}", ExperimentConfig::default().to_json_pretty());
            ExitCode::SUCCESS
        }
        Command::ListModels => {
            for entry in REGISTRY {
                println!("{}: {}", entry.name, entry.summary);
                for (name, default, meaning) in entry.params {
                    println!("    {name} = {default}  ({meaning})");
                }
            }
            ExitCode::SUCCESS
        }
    }
}
