mod config;
mod plot;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use runner::{RunError, RunOptions};

#[derive(Parser)]
#[command(name = "elastlab", version, about = "Local elasticity experiments: closed forms, SGD simulators and toy networks")]
struct Cli {
    /// Output root; each run writes into a subdirectory.
    #[arg(long, global = true, env = "ELASTLAB_OUT", default_value = "elastlab-out")]
    out: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the built-in numerical checks.
    Verify {
        /// Full-size experiments instead of the quick variants.
        #[arg(long)]
        full: bool,
        /// Replace a check's tolerance, as NAME=VALUE.
        #[arg(long = "override-tolerance", hide = true, value_parser = parse_override)]
        overrides: Vec<(String, f64)>,
    },
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value: f64 = value.parse().map_err(|e| format!("bad value '{value}': {e}"))?;
    Ok((name.to_string(), value))
}

fn run_name(cfg: &Config, path: &std::path::Path) -> String {
    cfg.name
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into())
}

fn execute(cli: Cli) -> Result<Vec<String>, RunError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = Config::load(&config)?;
            let out_dir = cli.out.join(run_name(&cfg, &config));
            let opts = RunOptions {
                seeds: cfg.resolved_seeds(cli.seeds.as_deref()),
                out_dir: out_dir.clone(),
                config_path: Some(config),
                overrides: Vec::new(),
            };
            let mut notes = runner::run(&cfg, &opts)?;
            notes.push(format!("wrote {}", out_dir.display()));
            Ok(notes)
        }
        Command::Verify { full, overrides } => runner::verify(full, &overrides, &cli.out.join("verify")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    match execute(cli) {
        Ok(notes) => {
            if !quiet {
                notes.iter().for_each(|n| println!("{n}"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let (RunError::Verify { report, .. }, false) = (&e, quiet) {
                report.iter().for_each(|n| println!("{n}"));
            }
            eprintln!("elastlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
