//! `flashpip` pipeline: dataset generation, baseline training, iteration
//! pruning, sparse-engine benchmarking and trajectory analysis.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use commands::{run, Outcome};
pub use config::{Command, RunConfig, ARTIFACT_VERSION, SCHEMA};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "flashpip", version, about, after_help = key_help())]
struct Args {
    command: Command,
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// bench: use random weights instead of a checkpoint
    #[arg(long)]
    random: bool,
    /// bench: verify against the masked dense oracle
    #[arg(long)]
    check: bool,
    /// key=value overrides, applied last
    overrides: Vec<String>,
}

fn key_help() -> String {
    let mut s = String::from("Config keys (default):\n");
    for (k, v, cmds, doc) in SCHEMA {
        let names: Vec<&str> = cmds.iter().map(|c| c.name()).collect();
        s.push_str(&format!("  {k}={v}  [{}] {doc}\n", names.join(",")));
    }
    s
}

/// Defaults, then the config file, then flags and overrides.
pub fn resolve<I, T>(argv: I) -> Result<Option<RunConfig>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(None);
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments");
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let mut cfg = RunConfig::defaults(args.command);
    if let Some(p) = &args.config {
        cfg.merge_file(p)?;
    }
    if let Some(s) = args.seed {
        cfg.set("seed", s.to_string())?;
    }
    if let Some(o) = &args.out {
        cfg.set("out", o.display().to_string())?;
    }
    if args.random {
        cfg.set("random", "true")?;
    }
    if args.check {
        cfg.set("check", "true")?;
    }
    for o in &args.overrides {
        cfg.set_override(o)?;
    }
    Ok(Some(cfg))
}

/// Parses and runs; writes summary lines to stdout.
pub fn run_args<I, T>(argv: I) -> Result<Option<Outcome>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let Some(cfg) = resolve(argv)? else {
        return Ok(None);
    };
    let out = run(&cfg)?;
    for line in &out.summary {
        println!("{line}");
    }
    Ok(Some(out))
}

/// Process entry point: returns the exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run_args(argv) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            match e {
                CliError::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
