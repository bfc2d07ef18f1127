use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbm_core::cli::{self, exit, ExperimentConfig};

/// Symbiotic branching experiments.
#[derive(Parser)]
#[command(name = "sbm", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// List experiments and the statement each checks.
    List,
    /// Run a config twice and compare the outputs byte for byte.
    SeedCheck { config: PathBuf },
    /// Print the default (or quick) config of an experiment.
    Config {
        experiment: String,
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    let code = match execute(args.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn execute(command: Command) -> sbm_core::Result<i32> {
    match command {
        Command::List => {
            print!("{}", cli::list_experiments());
            Ok(exit::PASS)
        }
        Command::Config { experiment, quick } => {
            let e = cli::find(&experiment)?;
            let cfg = if quick { e.quick_config() } else { e.default_config() };
            print!("{}", cfg.to_toml());
            Ok(exit::PASS)
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (manifest, outcome) = cli::run(&cfg)?;
            for line in &outcome.report.notes {
                println!("{line}");
            }
            let dir = cli::output_dir(&cfg, &cli::output_root());
            println!(
                "{}: {} ({:.1} s) -> {}",
                manifest.experiment,
                if manifest.pass { "pass" } else { "FAIL" },
                manifest.wall_time_seconds,
                dir.display()
            );
            Ok(if manifest.pass { exit::PASS } else { exit::STATISTICAL_FAIL })
        }
        Command::SeedCheck { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let check = cli::seed_check(&cfg)?;
            println!(
                "{}: {} files compared, {}",
                check.experiment,
                check.compared.len(),
                if check.identical { "identical".to_string() } else { format!("differ: {}", check.mismatched.join(", ")) }
            );
            Ok(if check.identical { exit::PASS } else { exit::STATISTICAL_FAIL })
        }
    }
}
