use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use speller_core::error::Error;
use speller_core::harness::{run_with_threads, Command, RunConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "speller", version, about = "Synthetic SSVEP speller: data, training and fusion decoding")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and preprocess synthetic trials into segment files
    Synth(Common),
    /// Train the EEGNet classifier on a segment dataset
    TrainEegnet(Common),
    /// Train the character language model
    TrainCharrnn(Common),
    /// Train one EEGNet per augmentation configuration
    Ablate(Common),
    /// Build word-level signals by stitching letter segments
    StitchWords(Common),
    /// Sweep the fusion weight over stitched word sets
    FuseEval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: runs/<command>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Cmd {
    fn split(self) -> (Command, Common) {
        match self {
            Cmd::Synth(c) => (Command::Synth, c),
            Cmd::TrainEegnet(c) => (Command::TrainEegnet, c),
            Cmd::TrainCharrnn(c) => (Command::TrainCharrnn, c),
            Cmd::Ablate(c) => (Command::Ablate, c),
            Cmd::StitchWords(c) => (Command::StitchWords, c),
            Cmd::FuseEval(c) => (Command::FuseEval, c),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, common) = cli.command.split();
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cmd.name()));
    let result = load_config(&common).and_then(|cfg| run_with_threads(cmd, &cfg, &out, common.threads));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}: {e}", cmd.name());
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
