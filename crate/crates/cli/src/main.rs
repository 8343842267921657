use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ltlcbf_cli::commands;
use ltlcbf_cli::scenario::{parse_assignment, Scenario};
use ltlcbf_cli::{CliError, Result};
use ltlcbf_core::runtime::Encoding;

/// Controller synthesis from temporal logic specifications with control
/// barrier functions.
#[derive(Debug, Parser)]
#[command(name = "ltlcbf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EncodingArg {
    Composite,
    PerField,
}

impl From<EncodingArg> for Encoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Composite => Encoding::Composite,
            EncodingArg::PerField => Encoding::PerField,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a specification file and print its clause decomposition.
    Check {
        spec: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the reachability sequence compiled from a scenario.
    Compile {
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Simulate a scenario and write <out>.trajectory.csv and <out>.events.json.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        encoding: Option<EncodingArg>,
        /// Override a scenario value, e.g. --set cbf.gamma=2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a simulated trajectory against the scenario's specification.
    Verify {
        scenario: PathBuf,
        /// Prefix given to `simulate --out`.
        trajectory: PathBuf,
    },
    /// Simulate and verify scenarios over a parameter grid in parallel.
    Sweep {
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Grid axis, e.g. --param cbf.gamma=0.5,1,2 (repeatable)
        #[arg(long = "param", value_name = "KEY=V1,V2,...")]
        params: Vec<String>,
    },
}

fn execute(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Check { spec, json } => commands::check(&spec, json, &mut stdout),
        Command::Compile { scenario, json } => {
            commands::compile_scenario(&scenario, json, &mut stdout)
        }
        Command::Simulate {
            scenario,
            out,
            encoding,
            overrides,
        } => {
            let overrides = overrides
                .iter()
                .map(|s| parse_assignment(s))
                .collect::<Result<Vec<_>>>()?;
            let scenario = Scenario::load_with(&scenario, &overrides)?;
            let scenario = commands::with_encoding(scenario, encoding.map(Encoding::from));
            commands::simulate(&scenario, &out, &mut stdout).map(|_| ())
        }
        Command::Verify {
            scenario,
            trajectory,
        } => {
            let scenario = Scenario::load(&scenario)?;
            commands::verify(&scenario, &trajectory, &mut stdout).map(|_| ())
        }
        Command::Sweep {
            scenarios,
            out_dir,
            params,
        } => {
            let rows = commands::sweep(&scenarios, &params, &out_dir, &mut stdout)?;
            match rows.iter().map(|r| r.exit_code).max() {
                Some(code) if code != 0 => Err(CliError::Batch {
                    code,
                    message: format!(
                        "{} of {} runs failed",
                        rows.iter().filter(|r| r.exit_code != 0).count(),
                        rows.len()
                    ),
                }),
                _ => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LTLCBF_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
