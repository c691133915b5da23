use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "doclen", version, about = "Toy document-level translation lab")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Directory holding train.jsonl, vocab.txt and contrastive.jsonl.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Corpus to decode, also the evaluation reference.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    hypotheses: Option<PathBuf>,
    #[arg(long, global = true)]
    suite: Option<PathBuf>,
    #[arg(long, global = true)]
    strategy: Option<String>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    #[arg(long, global = true)]
    max_len: Option<usize>,
    #[arg(long, global = true)]
    window_fraction: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    dls: Option<bool>,
    #[arg(long, global = true)]
    laa: Option<bool>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/valid/test splits, the vocabulary and the contrastive suite.
    GenData,
    /// Train a model; writes the checkpoint and train_log.csv.
    Train,
    /// Decode a corpus with the configured strategy.
    Decode,
    /// Score decoded output (BLEU, contrastive accuracy).
    Evaluate,
    /// Produce analysis CSVs.
    Analyze {
        #[command(subcommand)]
        which: Analysis,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Analysis {
    /// Attention entropy per length and scale mode.
    Entropy,
    /// Training segment length histograms per epoch.
    Lengths,
    /// Quality against maximum decoding length.
    Sweep,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = o.clone();
    }
    let o = &cli.overrides;
    if let Some(v) = &o.data {
        cfg.paths.data_dir = v.clone();
    }
    if let Some(v) = &o.checkpoint {
        cfg.paths.checkpoint = Some(v.clone());
    }
    if let Some(v) = &o.input {
        cfg.paths.decode_input = Some(v.clone());
    }
    if let Some(v) = &o.hypotheses {
        cfg.paths.hypotheses = Some(v.clone());
    }
    if let Some(v) = &o.suite {
        cfg.paths.suite = Some(v.clone());
    }
    if let Some(v) = &o.strategy {
        cfg.decode.strategy = v.clone();
    }
    if let Some(v) = o.beam {
        cfg.decode.beam = v;
    }
    if let Some(v) = o.max_len {
        cfg.decode.max_len = Some(v);
    }
    if let Some(v) = o.window_fraction {
        cfg.decode.window_fraction = v;
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.dls {
        cfg.train.dls = v;
    }
    if let Some(v) = o.laa {
        cfg.model.laa = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Decode => commands::decode_cmd(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Analyze { which: Analysis::Entropy } => commands::analyze_entropy(&cfg),
        Command::Analyze { which: Analysis::Lengths } => commands::analyze_lengths(&cfg),
        Command::Analyze { which: Analysis::Sweep } => commands::analyze_sweep(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
