use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use kwasr::{pipeline, ExperimentConfig};

#[derive(Parser)]
#[command(name = "kwasr", about = "Keyword-contextualized ASR experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the lexicon and corpora, filter and vote keywords.
    GenData,
    /// Fit a model on the configured training mix.
    Train,
    /// Decode eval corpora with and without keywords.
    Eval,
    /// Compare training mixes and batching policies.
    BiasExp,
    /// Join reports and logs into one Markdown summary.
    Report,
    /// Print the default config as TOML.
    DefaultConfig,
}

fn progress(tag: &str, step: usize, loss: f64) {
    if step % 50 == 0 {
        eprintln!("[{tag}] step {step} loss {loss:.4}");
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    let out = &cli.out;
    match cli.command {
        Command::GenData => {
            let data = pipeline::gen_data(&cfg, out)?;
            for (c, u) in &data.corpora {
                println!("{}: {} utterances", c.name, u.len());
            }
        }
        Command::Train => {
            let (_, log) = pipeline::train(&cfg, out, |s, l| progress("train", s, l))?;
            let last = log.steps.last().map_or(f64::NAN, |s| s.loss);
            println!("{} steps, final loss {last:.4}, {} spikes", log.len(), log.spike_count());
        }
        Command::Eval => print!("{}", pipeline::eval(&cfg, out)?.markdown()),
        Command::BiasExp => print!("{}", pipeline::bias_exp(&cfg, out, progress)?.markdown()),
        Command::Report => print!("{}", pipeline::report(&cfg, out)?),
        Command::DefaultConfig => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}
