//! `absa`: vocabulary building, training, inference, topic inspection and
//! evaluation for the aspect sentiment topic model.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or missing inputs
//! (detected before anything is written), 2 for failures while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{Profile, RunConfig, KEYS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] absa_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "absa", version, about = "Weakly supervised aspect sentiment topic model")]
struct Cli {
    /// Built-in domain defaults that the config file and flags override.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Restaurants)]
    profile: Profile,
    /// TOML file with [paths], [preprocess], [layout], [train], [infer] and [topics] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for initialization and training (same as --rng_seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the vocabulary from the training corpus.
    BuildVocab,
    /// Train a model and write a checkpoint plus a per-epoch loss log.
    Train,
    /// Label sentences with aspects and sentiments.
    Infer,
    /// Print the top words of every topic.
    Topics,
    /// Score predictions against gold labels.
    Eval,
    /// Write a generated corpus with known aspects, its caches and a config.
    Synth(commands::SynthArgs),
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for key in KEYS {
        let alias = key.name.replace('_', "-");
        let mut arg = Arg::new(key.name)
            .long(key.name)
            .global(true)
            .action(ArgAction::Set)
            .value_name(key.section.to_uppercase())
            .help(key.help)
            .help_heading("Configuration overrides");
        if alias != key.name {
            arg = arg.alias(alias);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn run() -> Result<(), CliError> {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Validation(e.to_string()))?;
    let sub = matches.subcommand().map(|(_, m)| m).unwrap_or(&matches);
    let overrides: Vec<_> = KEYS
        .iter()
        .filter_map(|k| sub.get_one::<String>(k.name).map(|v| (k, v.clone())))
        .collect();

    if let Command::Synth(args) = &cli.command {
        return commands::synth(args);
    }
    let cfg = RunConfig::load(cli.profile, cli.config.as_deref(), cli.seed, &overrides)?;
    match cli.command {
        Command::BuildVocab => commands::build_vocab(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Infer => commands::infer(&cfg),
        Command::Topics => commands::topics(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Synth(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
