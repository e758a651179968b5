//! Experiment configuration, read from TOML.
//!
//! Every table is optional; missing keys take the desk-scale defaults
//! below. `weight_decay` in `[optimizer]` is not given by the source setup
//! and defaults to 0.01.

use std::path::Path;

use anyhow::{bail, Context, Result};
use kwasr_core::corpus::{CorpusSpec, KeywordMode, Role, Split};
use kwasr_core::lexicon::LexiconSpec;
use kwasr_core::model::{DecoderConfig, LoraConfig};
use kwasr_core::text::{Language, VOCAB_SIZE};
use kwasr_core::train::OptimizerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub lexicon: LexiconSpec,
    pub corpora: Vec<NamedCorpus>,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub experiment: ExperimentOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCorpus {
    pub name: String,
    #[serde(flatten)]
    pub spec: CorpusSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    /// Frame stacking factor of the audio adapter.
    pub stack: usize,
    /// 0 disables LoRA.
    pub lora_rank: usize,
    pub fused_qkv: bool,
    /// Position id where every transcription starts; absent numbers
    /// positions contiguously.
    pub transcript_anchor: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 192,
            max_positions: 320,
            stack: 4,
            lora_rank: 4,
            fused_qkv: true,
            transcript_anchor: Some(128),
        }
    }
}

impl ModelConfig {
    pub fn decoder(&self) -> Result<DecoderConfig> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            bail!("model.d_model ({}) must be a multiple of model.n_heads ({})", self.d_model, self.n_heads);
        }
        let cfg = DecoderConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_k: self.d_model / self.n_heads,
            d_ff: self.d_ff,
            vocab_size: VOCAB_SIZE,
            max_positions: self.max_positions,
        };
        cfg.validate().context("model")?;
        if let Some(a) = self.transcript_anchor.filter(|&a| a >= self.max_positions) {
            bail!("model.transcript_anchor ({a}) must be below model.max_positions ({})", self.max_positions);
        }
        Ok(cfg)
    }

    pub fn lora(&self) -> Option<LoraConfig> {
        (self.lora_rank > 0).then(|| LoraConfig::new(self.lora_rank, self.fused_qkv))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    pub keyword_mode: KeywordMode,
    /// Evaluate with keywords at inference in addition to without.
    pub inference_keywords: bool,
    pub generation_factor: f64,
    pub generation_cap: usize,
    pub budget: usize,
    pub eos_equals_bos: bool,
    /// Seeds for repeated training runs.
    pub seeds: Vec<u64>,
    /// Splits decoded by `eval`.
    pub eval_splits: Vec<Split>,
    /// Steps per run in the batching-policy study of `bias-exp`.
    pub batching_study_steps: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            keyword_mode: KeywordMode::Duplicated,
            inference_keywords: true,
            generation_factor: kwasr_core::decode::DEFAULT_FACTOR,
            generation_cap: kwasr_core::decode::HARD_CAP,
            budget: kwasr_core::prompt::DEFAULT_BUDGET,
            eos_equals_bos: false,
            seeds: vec![0, 1, 2],
            eval_splits: vec![Split::Dev, Split::Test],
            batching_study_steps: 60,
        }
    }
}

fn corpus(name: &str, role: Role, split: Split, n_videos: usize, clips: usize) -> NamedCorpus {
    let mut spec = CorpusSpec::new(role, split, n_videos, clips);
    if role == Role::LsLike {
        spec.language = Language::En;
    }
    NamedCorpus {
        name: name.to_string(),
        spec,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut corpora = vec![
            corpus("r-like-train", Role::RLike, Split::Train, 11_600, 1),
            corpus("cv-like-train", Role::CvLike, Split::Train, 150, 1),
            corpus("ls-like-train", Role::LsLike, Split::Train, 150, 1),
            corpus("y-like-train", Role::YLike, Split::Train, 2000, 1),
            corpus("cv-like-dev", Role::CvLike, Split::Dev, 40, 1),
            corpus("cv-like-test", Role::CvLike, Split::Test, 40, 1),
            corpus("ls-like-dev", Role::LsLike, Split::Dev, 40, 1),
            corpus("ls-like-test", Role::LsLike, Split::Test, 40, 1),
            corpus("y-like-dev", Role::YLike, Split::Dev, 20, 5),
            corpus("y-like-test", Role::YLike, Split::Test, 20, 5),
        ];
        for c in &mut corpora {
            let spec = &mut c.spec;
            // disjoint slices of the plain vocabulary act as a domain cue
            match spec.role {
                Role::RLike => {
                    spec.truncation_prob = 0.7;
                    (spec.min_words, spec.max_words) = (2, 4);
                    spec.plain_vocab = (0.0, 0.5);
                }
                Role::CvLike => spec.plain_vocab = (0.5, 0.7),
                Role::LsLike => {}
                Role::YLike => {
                    (spec.min_words, spec.max_words) = (10, 14);
                    spec.plain_vocab = (0.7, 1.0);
                    spec.y.homonym_rate = 0.6;
                    spec.y.held_out_members = 4;
                    spec.y.proposer.partner_share = 0.3;
                    if spec.split == Split::Train {
                        spec.y.english_heavy_videos = 2;
                        spec.y.bad_caption_videos = 30;
                    }
                }
            }
        }
        Self {
            name: "default".into(),
            seed: 0,
            lexicon: LexiconSpec {
                n_words: 400,
                homonym_group_count: 12,
                members_per_group: 24,
                code_len: 3,
                alphabet_size: 16,
                seed: 0,
            },
            corpora,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig {
                base_lr: 1e-3,
                epochs: 7,
                ..Default::default()
            },
            experiment: ExperimentOptions::default(),
        }
    }
}

fn hex_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.decoder()?;
        if self.model.stack == 0 {
            bail!("model.stack must be positive");
        }
        self.optimizer.validate().context("optimizer")?;
        let lexicon = kwasr_core::lexicon::build_lexicon(&self.lexicon).context("lexicon")?;
        let mut names = std::collections::BTreeSet::new();
        for c in &self.corpora {
            if !names.insert(&c.name) {
                bail!("corpora: duplicate name {:?}", c.name);
            }
            c.spec.validate(&lexicon).with_context(|| format!("corpora.{}", c.name))?;
        }
        let y_train = self
            .corpora
            .iter()
            .filter(|c| c.spec.role == Role::YLike && c.spec.split == Split::Train)
            .count();
        if y_train != 1 {
            bail!("corpora: need exactly one y-like train corpus, found {y_train}");
        }
        let e = &self.experiment;
        if !(e.generation_factor > 0.0) || e.generation_cap == 0 {
            bail!("experiment.generation_factor and generation_cap must be positive");
        }
        if e.seeds.is_empty() {
            bail!("experiment.seeds must not be empty");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex_digest(self)
    }

    /// Hash of the fields that determine generated data.
    pub fn data_hash(&self) -> String {
        hex_digest(&(self.seed, &self.lexicon, &self.corpora))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = a.clone().with_seed(5);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.d_model = 30;
        let err = format!("{:#}", cfg.validate().unwrap_err());
        assert!(err.contains("model.d_model"), "{err}");

        let err = toml::from_str::<ExperimentConfig>("[model]\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("width"));
    }
}
