use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mris_core::{ErrorClass, MrisError};

mod commands;

/// Cross-modal retrieval and synthesis pipeline.
///
/// Every subcommand reads `--config <path>`; any config key can be
/// overridden with `--key value`. Log verbosity follows `MRIS_LOG`
/// (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "mris", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired dataset to `data_dir`.
    Generate(RunArgs),
    /// Train query and target encoders on the train_db split.
    Train(RunArgs),
    /// Embed train_db targets with the trained target encoders.
    Embed(RunArgs),
    /// Build the embedding databases from the embeddings and targets.
    Index(RunArgs),
    /// Synthesize target images for the test split.
    Synthesize(RunArgs),
    /// Report retrieval recall, synthesis error and the downstream probe.
    Evaluate(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Config overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, MrisError> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| MrisError::Config(format!("expected --key, got '{flag}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let value = it
                .next()
                .ok_or_else(|| MrisError::Config(format!("missing value for --{key}")))?;
            out.push((key.to_string(), value.clone()));
        }
    }
    Ok(out)
}

fn exit_code(e: &MrisError) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MRIS_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (run, args): (commands::Handler, RunArgs) = match cli.command {
        Command::Generate(a) => (commands::generate, a),
        Command::Train(a) => (commands::train, a),
        Command::Embed(a) => (commands::embed, a),
        Command::Index(a) => (commands::index, a),
        Command::Synthesize(a) => (commands::synthesize, a),
        Command::Evaluate(a) => (commands::evaluate, a),
    };
    let result = parse_overrides(&args.overrides)
        .and_then(|o| mris_core::config::RunConfig::load(Some(&args.config), &o))
        .and_then(|cfg| commands::with_threads(&cfg, || run(&cfg)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
