use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use oslab_cli::{run, CliError, Config, Verb};

/// Seeded experiments on operator semistable processes.
#[derive(Parser)]
#[command(name = "oslab", version)]
struct Cli {
    verb: Verb,
    /// JSON configuration for the verb.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the output files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::from(e).context(cli.config.display()))
        .and_then(|text| Config::parse(cli.verb, &text))
        .and_then(|cfg| run(&cfg, Some(&cli.out), cli.threads.filter(|&n| n > 0)));
    match result {
        Ok(record) => {
            println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
            if record.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            println!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
