use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l2t_hyena::commands::{cmd_compare, cmd_eval, cmd_train};
use l2t_hyena::config::RunConfig;
use l2t_hyena::Error;

#[derive(Parser)]
#[command(name = "l2t-hyena", version, about = "Hyena language model with a learned loss weighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics and checkpoints.
    Train {
        /// Configuration file of `key: value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `baseline` or `l2t`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Any configuration key as `key=value`; may repeat.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Report validation loss and perplexity of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare a baseline run directory with an L2T run directory.
    Compare {
        baseline: PathBuf,
        l2t: PathBuf,
        /// Directory for `compare.json` (defaults to the L2T run).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::config(kv.as_str(), "expected KEY=VALUE"))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            config,
            mode,
            seed,
            epochs,
            deterministic,
            out_dir,
            overrides,
        } => {
            let mut pairs = parse_overrides(&overrides)?;
            let named = [
                ("mode", mode),
                ("seed", seed.map(|s| s.to_string())),
                ("epochs", epochs.map(|e| e.to_string())),
                ("deterministic", deterministic.then(|| "true".to_string())),
                ("out_dir", out_dir.map(|p| p.display().to_string())),
            ];
            pairs.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
            let cfg = RunConfig::resolve(config.as_deref(), &pairs)?;
            cmd_train(&cfg)?;
        }
        Command::Eval {
            checkpoint,
            config,
            overrides,
        } => {
            let cfg = RunConfig::resolve(config.as_deref(), &parse_overrides(&overrides)?)?;
            cmd_eval(&checkpoint, &cfg)?;
        }
        Command::Compare { baseline, l2t, out } => {
            let out = out.unwrap_or_else(|| l2t.clone());
            cmd_compare(&baseline, &l2t, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
