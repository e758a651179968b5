//! Prints references next to greedy hypotheses, with and without keywords,
//! for the first utterances of one corpus.
//!
//! ```text
//! cargo run --release --example transcripts -- --out runs/default --corpus y-like-test
//! ```

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use kwasr::{pipeline, ExperimentConfig};
use kwasr_core::text::normalize;

#[derive(Parser)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Checkpoint file name under `models/`.
    #[arg(long, default_value = "duplicated-seed0.ckpt")]
    model: String,
    #[arg(long, default_value = "y-like-test")]
    corpus: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let data = pipeline::load_data(&cfg, &args.out)?;
    let model = pipeline::load_model(&args.out.join("models").join(&args.model))?;
    let target = cfg
        .corpora
        .iter()
        .find(|c| c.name == args.corpus)
        .with_context(|| format!("no corpus named {}", args.corpus))?;
    let utts = data.get(&args.corpus).context("corpus not loaded")?;
    let utts = &utts[..args.count.min(utts.len())];
    let limit = pipeline::generation_limit(&cfg, &data, target)?;
    for with_keywords in [false, true] {
        println!("== keywords at inference: {with_keywords}");
        let hyps = pipeline::transcribe(&model, utts, &data.lexicon, &cfg, with_keywords, limit)?;
        for (u, h) in utts.iter().zip(&hyps) {
            println!("REF {}", normalize(&u.text, u.lang).text);
            println!("HYP {h}");
            if let Some(k) = &u.keywords {
                println!("KW  {}", k.join(" "));
            }
            println!();
        }
    }
    Ok(())
}
