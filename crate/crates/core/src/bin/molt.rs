use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use molt::cli::{converge, parse_config, run_scenario, RunConfig, SCENARIOS};
use molt::error::{MoltError, Result};

#[derive(Parser)]
#[command(name = "molt", version, about = "Implicit wave solver on embedded boundaries")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario described by a `key = value` config file.
    Run { config: PathBuf },
    /// Refinement study: `levels` resolutions, each twice the previous.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// List the built-in scenarios.
    Scenarios,
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(MoltError::from)?;
    parse_config(&text)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let out = match args.cmd {
        Cmd::Scenarios => {
            for (name, about) in SCENARIOS {
                println!("{name:<18} {about}");
            }
            Ok(())
        }
        Cmd::Run { config } => load(&config).and_then(|c| run_scenario(&c)).map(|r| print!("{}", r.summary())),
        Cmd::Converge { config, levels } => load(&config).and_then(|c| converge(&c, levels)).map(|r| print!("{r}")),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("molt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
