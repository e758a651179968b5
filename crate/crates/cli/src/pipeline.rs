//! Subcommand implementations: data generation, training, evaluation and
//! the dataset-bias experiment.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kwasr_core::audio::stack_frames;
use kwasr_core::corpus::{
    compose_training_mix, filter_corpus, generate_corpus, mix_seed, read_jsonl, write_jsonl, Corpus, KeywordMode,
    Role, Split, Utterance, VideoStats,
};
use kwasr_core::decode::{dev_max_tokens, greedy_decode, GenerationLimits};
use kwasr_core::eval::report::{bias_table, kwer_table, rate_table, ResultRow};
use kwasr_core::eval::{error_rate, kwer, select_eval_keywords, KeywordItem, Unit};
use kwasr_core::lexicon::{build_lexicon, SyntheticLexicon};
use kwasr_core::model::checkpoint::{read_checkpoint, write_checkpoint};
use kwasr_core::model::AsrModel;
use kwasr_core::prompt::{assemble_example, inference_prefix, shuffle_keywords, PromptRecord};
use kwasr_core::text::{normalize, Language, Tokenizer};
use kwasr_core::train::{fit_with, BatchPolicy, OptimizerConfig, TrainItem, TrainingLog};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NamedCorpus};

/// Generated lexicon and filtered corpora, in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub lexicon: SyntheticLexicon,
    pub corpora: Vec<(NamedCorpus, Vec<Utterance>)>,
}

impl DataSet {
    pub fn get(&self, name: &str) -> Option<&[Utterance]> {
        self.corpora
            .iter()
            .find(|(c, _)| c.name == name)
            .map(|(_, u)| u.as_slice())
    }

    fn train_corpora(&self) -> impl Iterator<Item = &(NamedCorpus, Vec<Utterance>)> {
        self.corpora.iter().filter(|(c, _)| c.spec.split == Split::Train)
    }

    /// Normalized stored transcriptions of every training corpus.
    pub fn train_texts(&self) -> Vec<String> {
        self.train_corpora()
            .flat_map(|(_, us)| us.iter().map(|u| normalize(&u.text, u.lang).text))
            .collect()
    }

    /// The training mix for `mode`.
    pub fn training_mix(&self, mode: KeywordMode) -> Result<Vec<Utterance>> {
        let corpora: Vec<Corpus> = self
            .train_corpora()
            .map(|(c, us)| Corpus {
                role: c.spec.role,
                utterances: us.clone(),
            })
            .collect();
        Ok(compose_training_mix(&corpora, mode)?)
    }
}

/// Per-video filter outcome written next to the corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub corpus: String,
    pub video_id: String,
    pub proxy_cer: f64,
    pub alpha_ratio: f64,
    pub dropped: bool,
}

/// Header embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            config_name: cfg.name.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    fn markdown(&self) -> String {
        format!(
            "<!-- config: {} | hash: {} | seed: {} -->\n\n",
            self.config_name, self.config_hash, self.seed
        )
    }
}

pub fn tokenizer(cfg: &ExperimentConfig) -> Tokenizer {
    Tokenizer::new(cfg.experiment.eos_equals_bos)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn corpus_path(out: &Path, name: &str) -> PathBuf {
    out.join("corpora").join(format!("{name}.jsonl"))
}

/// Builds the lexicon and every corpus, filters Y-like videos, and keeps
/// everything in memory.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<(DataSet, Vec<FilterRecord>)> {
    let lexicon = build_lexicon(&cfg.lexicon).context("lexicon")?;
    let mut corpora = Vec::new();
    let mut records = Vec::new();
    for (i, c) in cfg.corpora.iter().enumerate() {
        let seed = mix_seed(cfg.seed, 0xc0, i as u64);
        let utts = generate_corpus(&c.spec, &lexicon, seed).with_context(|| format!("corpora.{}", c.name))?;
        let (kept, stats) = if c.spec.role == Role::YLike {
            filter_corpus(utts, &lexicon)?
        } else {
            (utts, Vec::new())
        };
        records.extend(stats.into_iter().map(|(video_id, s): (String, VideoStats)| FilterRecord {
            corpus: c.name.clone(),
            video_id,
            proxy_cer: s.proxy_cer,
            alpha_ratio: s.alpha_ratio,
            dropped: s.should_drop(),
        }));
        corpora.push((c.clone(), kept));
    }
    Ok((DataSet { lexicon, corpora }, records))
}

/// `gen-data`: writes `lexicon.json`, `corpora/<name>.jsonl` and
/// `filter_stats.json` under `out`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<DataSet> {
    let (data, records) = generate_data(cfg)?;
    write(&out.join("lexicon.json"), serde_json::to_vec_pretty(&data.lexicon)?)?;
    for (c, utts) in &data.corpora {
        let mut buf = Vec::new();
        write_jsonl(utts, &mut buf)?;
        write(&corpus_path(out, &c.name), buf)?;
    }
    write(&out.join("filter_stats.json"), serde_json::to_vec_pretty(&records)?)?;
    write(&out.join(DATA_STAMP), cfg.data_hash())?;
    Ok(data)
}

const DATA_STAMP: &str = "data.sha256";

fn data_is_current(cfg: &ExperimentConfig, out: &Path) -> bool {
    fs::read_to_string(out.join(DATA_STAMP)).is_ok_and(|h| h == cfg.data_hash())
}

/// Reads what `gen-data` wrote.
pub fn load_data(cfg: &ExperimentConfig, out: &Path) -> Result<DataSet> {
    let path = out.join("lexicon.json");
    let text = fs::read(&path).with_context(|| format!("missing artifact {}; run gen-data first", path.display()))?;
    if !data_is_current(cfg, out) {
        bail!("data under {} was generated from a different config; run gen-data again", out.display());
    }
    let lexicon: SyntheticLexicon = serde_json::from_slice(&text)?;
    let mut corpora = Vec::new();
    for c in &cfg.corpora {
        let path = corpus_path(out, &c.name);
        let file = fs::File::open(&path)
            .with_context(|| format!("missing artifact {}; run gen-data first", path.display()))?;
        corpora.push((c.clone(), read_jsonl(BufReader::new(file))?));
    }
    Ok(DataSet { lexicon, corpora })
}

/// Loads the data under `out`, generating it first when absent or stale.
pub fn ensure_data(cfg: &ExperimentConfig, out: &Path) -> Result<DataSet> {
    if data_is_current(cfg, out) {
        load_data(cfg, out)
    } else {
        gen_data(cfg, out)
    }
}

/// Assembles one training example: stacked features plus a prompt with the
/// utterance's keywords shuffled by a per-id seed.
pub fn build_item(
    u: &Utterance,
    lexicon: &SyntheticLexicon,
    tok: &Tokenizer,
    cfg: &ExperimentConfig,
) -> Result<TrainItem> {
    let audio = stack_frames(&u.features(lexicon)?, cfg.model.stack);
    let keywords = u.keywords.as_ref().map(|k| shuffle_keywords(k, id_seed(&u.id)));
    let record = PromptRecord::new(u.lang, keywords, normalize(&u.text, u.lang).text);
    let example = assemble_example(&record, audio.len(), tok, cfg.experiment.budget)
        .with_context(|| format!("utterance {}", u.id))?;
    Ok(TrainItem { example, audio })
}

fn id_seed(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn build_items(utts: &[Utterance], lexicon: &SyntheticLexicon, cfg: &ExperimentConfig) -> Result<Vec<TrainItem>> {
    let tok = tokenizer(cfg);
    utts.par_iter().map(|u| build_item(u, lexicon, &tok, cfg)).collect()
}

pub fn new_model(cfg: &ExperimentConfig, d_audio: usize, seed: u64) -> Result<AsrModel> {
    Ok(AsrModel::new(
        cfg.model.decoder()?,
        cfg.model.lora(),
        cfg.model.stack,
        d_audio,
        seed,
    )?
    .with_transcript_anchor(cfg.model.transcript_anchor))
}

/// Trains a fresh model on the mix for `mode`.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &DataSet,
    mode: KeywordMode,
    optimizer: &OptimizerConfig,
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<(AsrModel, TrainingLog)> {
    let mix = data.training_mix(mode)?;
    let items = build_items(&mix, &data.lexicon, cfg)?;
    let mut model = new_model(cfg, data.lexicon.alphabet_size, seed)?;
    let opt = OptimizerConfig {
        seed,
        ..optimizer.clone()
    };
    let log = fit_with(&items, &mut model, &opt, |s| progress(s.step, s.loss))?;
    Ok((model, log))
}

pub fn save_model(model: &AsrModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    write(path, buf)
}

pub fn load_model(path: &Path) -> Result<AsrModel> {
    let file = fs::File::open(path).with_context(|| format!("missing artifact {}; run train first", path.display()))?;
    Ok(read_checkpoint(BufReader::new(file))?)
}

fn unit_for(lang: Language) -> Unit {
    match lang {
        Language::Ja => Unit::Char,
        Language::En => Unit::Word,
    }
}

/// Generation limit for a corpus: 1.25x the longest transcription of the
/// dev corpus with the same role and language.
pub fn generation_limit(cfg: &ExperimentConfig, data: &DataSet, target: &NamedCorpus) -> Result<usize> {
    let dev = data
        .corpora
        .iter()
        .find(|(c, _)| {
            c.spec.split == Split::Dev && c.spec.role == target.spec.role && c.spec.language == target.spec.language
        })
        .or_else(|| data.corpora.iter().find(|(c, _)| c.name == target.name))
        .map(|(_, u)| u)
        .filter(|u| !u.is_empty())
        .with_context(|| format!("no dev transcriptions to size generation for {}", target.name))?;
    let texts: Vec<String> = dev.iter().map(|u| normalize(&u.text, u.lang).text).collect();
    let limits = GenerationLimits {
        dev_max_tokens: dev_max_tokens(&texts, &tokenizer(cfg))?,
        factor: cfg.experiment.generation_factor,
        hard_cap: cfg.experiment.generation_cap,
    };
    Ok(limits.effective())
}

/// Decoded hypothesis (normalized) for every utterance.
pub fn transcribe(
    model: &AsrModel,
    utts: &[Utterance],
    lexicon: &SyntheticLexicon,
    cfg: &ExperimentConfig,
    with_keywords: bool,
    limit: usize,
) -> Result<Vec<String>> {
    let tok = tokenizer(cfg);
    let max = model.decoder.config.max_positions;
    utts.par_iter()
        .map(|u| {
            let audio = stack_frames(&u.features(lexicon)?, cfg.model.stack);
            let keywords = if with_keywords {
                u.keywords.as_ref().map(|k| shuffle_keywords(k, id_seed(&u.id)))
            } else {
                None
            };
            let prefix = inference_prefix(u.lang, keywords.as_deref(), limit, &tok, cfg.experiment.budget)?;
            // stay within the positional table
            let room = max.saturating_sub(model.transcript_start(audio.len(), prefix.len()));
            let ids = greedy_decode(model, &audio, &prefix, limit.min(room), tok.eos_id)?;
            let bytes = tok.decode_bytes(&ids)?;
            Ok(normalize(&String::from_utf8_lossy(&bytes), u.lang).text)
        })
        .collect()
}

/// Error rate and KWER of one model on one corpus under one inference
/// condition.
pub fn evaluate_corpus(
    model: &AsrModel,
    cfg: &ExperimentConfig,
    data: &DataSet,
    corpus: &NamedCorpus,
    with_keywords: bool,
    train_texts: &[String],
) -> Result<(kwasr_core::eval::MetricReport, Vec<String>)> {
    let utts = data
        .get(&corpus.name)
        .with_context(|| format!("corpus {} not generated", corpus.name))?;
    let limit = generation_limit(cfg, data, corpus)?;
    let hyps = transcribe(model, utts, &data.lexicon, cfg, with_keywords, limit)?;
    let refs: Vec<String> = utts.iter().map(|u| normalize(&u.text, u.lang).text).collect();
    let pairs: Vec<(&str, &str)> = refs.iter().map(String::as_str).zip(hyps.iter().map(String::as_str)).collect();
    let mut report = error_rate(&pairs, unit_for(corpus.spec.language))?;

    let candidates: Vec<Vec<String>> = utts
        .iter()
        .map(|u| {
            u.keywords
                .iter()
                .flatten()
                .map(|k| normalize(k, u.lang).text)
                .collect()
        })
        .collect();
    let eval_keywords = select_eval_keywords(&candidates, train_texts);
    if !eval_keywords.is_empty() {
        let items: Vec<KeywordItem> = refs
            .iter()
            .zip(&hyps)
            .zip(&candidates)
            .map(|((r, h), c)| KeywordItem {
                reference: r.clone(),
                hypothesis: h.clone(),
                keywords: c.iter().filter(|k| eval_keywords.contains(*k)).cloned().collect(),
            })
            .collect();
        report.kwer = kwer(&items).ok();
    }
    Ok((report, hyps))
}

fn eval_corpora(cfg: &ExperimentConfig) -> Vec<&NamedCorpus> {
    cfg.corpora
        .iter()
        .filter(|c| cfg.experiment.eval_splits.contains(&c.spec.split))
        .collect()
}

/// Evaluates a model on every eval corpus without keywords and, when
/// enabled and the corpus carries keywords, with them.
pub fn evaluate(
    model: &AsrModel,
    model_name: &str,
    kw_train: KeywordMode,
    cfg: &ExperimentConfig,
    data: &DataSet,
) -> Result<Vec<ResultRow>> {
    let train_texts = data.train_texts();
    let mut rows = Vec::new();
    for corpus in eval_corpora(cfg) {
        let has_keywords = data
            .get(&corpus.name)
            .is_some_and(|us| us.iter().any(|u| u.keywords.is_some()));
        let mut conditions = vec![false];
        if cfg.experiment.inference_keywords && has_keywords {
            conditions.push(true);
        }
        for with_keywords in conditions {
            let (report, _) = evaluate_corpus(model, cfg, data, corpus, with_keywords, &train_texts)?;
            rows.push(ResultRow {
                model: model_name.to_string(),
                kw_train,
                kw_inference: with_keywords,
                dataset: corpus.spec.role.name().to_string(),
                split: corpus.spec.split.name().to_string(),
                report,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub rows: Vec<ResultRow>,
}

impl EvalReport {
    pub fn markdown(&self) -> String {
        let mut s = self.provenance.markdown();
        s.push_str("## Error rates (CER for Japanese, WER for English)\n\n");
        s.push_str(&rate_table(&self.rows));
        s.push_str("\n## Keyword error rates\n\n");
        s.push_str(&kwer_table(&self.rows));
        s
    }
}

fn write_report<T: Serialize>(out: &Path, stem: &str, value: &T, markdown: &str) -> Result<()> {
    let dir = out.join("reports");
    write(&dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(value)?)?;
    write(&dir.join(format!("{stem}.md")), markdown)
}

fn model_tag(mode: KeywordMode, seed: u64) -> String {
    let m = match mode {
        KeywordMode::None => "none",
        KeywordMode::Duplicated => "duplicated",
        KeywordMode::KeywordsOnly => "keywords_only",
    };
    format!("{m}-seed{seed}")
}

fn checkpoint_path(out: &Path, tag: &str) -> PathBuf {
    out.join("models").join(format!("{tag}.ckpt"))
}

fn log_path(out: &Path, tag: &str) -> PathBuf {
    out.join("logs").join(format!("{tag}.jsonl"))
}

fn stamp_path(out: &Path, tag: &str) -> PathBuf {
    out.join("models").join(format!("{tag}.sha256"))
}

/// Writes checkpoint, training log and the config hash they came from.
fn save_run(cfg: &ExperimentConfig, out: &Path, tag: &str, model: &AsrModel, log: &TrainingLog) -> Result<()> {
    save_model(model, &checkpoint_path(out, tag))?;
    write(&log_path(out, tag), log.to_jsonl())?;
    write(&stamp_path(out, tag), cfg.hash())
}

/// A checkpoint trained from exactly this config, if one exists.
fn reusable_model(cfg: &ExperimentConfig, out: &Path, tag: &str) -> Result<Option<AsrModel>> {
    let current = fs::read_to_string(stamp_path(out, tag)).is_ok_and(|h| h == cfg.hash());
    if current {
        load_model(&checkpoint_path(out, tag)).map(Some)
    } else {
        Ok(None)
    }
}

/// `train`: fits the configured keyword mode at the config seed and writes
/// checkpoint and log.
pub fn train(cfg: &ExperimentConfig, out: &Path, progress: impl FnMut(usize, f64)) -> Result<(AsrModel, TrainingLog)> {
    let data = ensure_data(cfg, out)?;
    let mode = cfg.experiment.keyword_mode;
    let (model, log) = train_model(cfg, &data, mode, &cfg.optimizer, cfg.seed, progress)?;
    save_run(cfg, out, &model_tag(mode, cfg.seed), &model, &log)?;
    Ok((model, log))
}

/// `eval`: decodes the eval corpora with the checkpoint written by `train`.
pub fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let data = load_data(cfg, out)?;
    let mode = cfg.experiment.keyword_mode;
    let tag = model_tag(mode, cfg.seed);
    let model = load_model(&checkpoint_path(out, &tag))?;
    let rows = evaluate(&model, &tag, mode, cfg, &data)?;
    let report = EvalReport {
        provenance: Provenance::of(cfg),
        rows,
    };
    write_report(out, &format!("eval-{tag}"), &report, &report.markdown())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: BatchPolicy,
    pub log_file: String,
    pub steps: usize,
    pub spikes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub provenance: Provenance,
    /// Y-like dev rows for each training mix and inference condition.
    pub rows: Vec<ResultRow>,
    pub batching: Vec<PolicyRun>,
}

impl BiasReport {
    pub fn markdown(&self) -> String {
        let mut s = self.provenance.markdown();
        s.push_str("## Dataset bias on the Y-like dev set\n\n");
        s.push_str(&bias_table(&self.rows));
        s.push_str("\n## Batching policy study\n\n| Policy | Steps | Spikes | Log |\n|---|---:|---:|---|\n");
        for r in &self.batching {
            let name = serde_json::to_value(r.policy)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            s.push_str(&format!("| {name} | {} | {} | {} |\n", r.steps, r.spikes, r.log_file));
        }
        s
    }

    pub fn row(&self, mode: KeywordMode, with_keywords: bool) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.kw_train == mode && r.kw_inference == with_keywords)
    }
}

/// The Y-like dev corpus used by the bias study.
pub fn y_dev(cfg: &ExperimentConfig) -> Result<&NamedCorpus> {
    cfg.corpora
        .iter()
        .find(|c| c.spec.role == Role::YLike && c.spec.split == Split::Dev)
        .context("corpora: the bias experiment needs a y-like dev corpus")
}

/// Trains (or reuses) a model per mix and evaluates the Y-like dev set with
/// and without keywords. Mixes train concurrently, each on its own model.
pub fn bias_rows(
    cfg: &ExperimentConfig,
    data: &DataSet,
    out: &Path,
    modes: &[KeywordMode],
    progress: impl Fn(&str, usize, f64) + Sync,
) -> Result<Vec<ResultRow>> {
    let dev = y_dev(cfg)?;
    let train_texts = data.train_texts();
    let per_mode: Vec<Vec<ResultRow>> = modes
        .par_iter()
        .map(|&mode| -> Result<Vec<ResultRow>> {
            let tag = model_tag(mode, cfg.seed);
            let model = match reusable_model(cfg, out, &tag)? {
                Some(model) => model,
                None => {
                    let (model, log) =
                        train_model(cfg, data, mode, &cfg.optimizer, cfg.seed, |s, l| progress(&tag, s, l))?;
                    save_run(cfg, out, &tag, &model, &log)?;
                    model
                }
            };
            let mut rows = Vec::new();
            for with_keywords in [false, true] {
                let (report, _) = evaluate_corpus(&model, cfg, data, dev, with_keywords, &train_texts)?;
                rows.push(ResultRow {
                    model: tag.clone(),
                    kw_train: mode,
                    kw_inference: with_keywords,
                    dataset: dev.spec.role.name().to_string(),
                    split: dev.spec.split.name().to_string(),
                    report,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_mode.into_iter().flatten().collect())
}

/// Short runs under both batching policies, logging every step.
pub fn batching_study(cfg: &ExperimentConfig, data: &DataSet, out: &Path) -> Result<Vec<PolicyRun>> {
    let mix = data.training_mix(cfg.experiment.keyword_mode)?;
    let items = build_items(&mix, &data.lexicon, cfg)?;
    let per_epoch = items.len().div_ceil(cfg.optimizer.batch_size());
    let steps = cfg.experiment.batching_study_steps.min(per_epoch).max(1);
    let mut runs = Vec::new();
    // one epoch over a seeded subset, identical for both policies
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xba7c, 0));
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rng);
    let subset: Vec<TrainItem> = idx
        .into_iter()
        .take(steps * cfg.optimizer.batch_size())
        .map(|i| items[i].clone())
        .collect();
    for policy in [BatchPolicy::RandomShuffle, BatchPolicy::LengthGrouped] {
        let opt = OptimizerConfig {
            batch_policy: policy,
            epochs: 1,
            seed: cfg.seed,
            ..cfg.optimizer.clone()
        };
        let mut model = new_model(cfg, data.lexicon.alphabet_size, cfg.seed)?;
        let log = fit_with(&subset, &mut model, &opt, |_| {})?;
        let name = match policy {
            BatchPolicy::RandomShuffle => "random_shuffle",
            BatchPolicy::LengthGrouped => "length_grouped",
        };
        let file = format!("logs/batching-{name}.jsonl");
        write(&out.join(&file), log.to_jsonl())?;
        runs.push(PolicyRun {
            policy,
            log_file: file,
            steps: log.len(),
            spikes: log.spike_count(),
        });
    }
    Ok(runs)
}

/// `bias-exp`: the three mixes on the Y-like dev set plus the batching
/// study.
pub fn bias_exp(
    cfg: &ExperimentConfig,
    out: &Path,
    progress: impl Fn(&str, usize, f64) + Sync,
) -> Result<BiasReport> {
    let data = ensure_data(cfg, out)?;
    let rows = bias_rows(
        cfg,
        &data,
        out,
        &[KeywordMode::None, KeywordMode::Duplicated, KeywordMode::KeywordsOnly],
        progress,
    )?;
    let batching = batching_study(cfg, &data, out)?;
    let report = BiasReport {
        provenance: Provenance::of(cfg),
        rows,
        batching,
    };
    write_report(out, "bias", &report, &report.markdown())?;
    Ok(report)
}

/// `report`: joins every JSON report and training log under `out` into
/// `reports/summary.md`.
pub fn report(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let dir = out.join("reports");
    let mut names: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(_) => bail!("missing artifact {}; run eval or bias-exp first", dir.display()),
    };
    names.sort();
    let mut eval_rows = Vec::new();
    let mut bias = None;
    for p in &names {
        if p.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = fs::read(p)?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if stem.starts_with("eval-") {
            let r: EvalReport = serde_json::from_slice(&text).with_context(|| format!("reading {}", p.display()))?;
            eval_rows.extend(r.rows);
        } else if stem == "bias" {
            bias = Some(serde_json::from_slice::<BiasReport>(&text)?);
        }
    }
    if eval_rows.is_empty() && bias.is_none() {
        bail!("no reports under {}", dir.display());
    }

    let mut logs: BTreeMap<String, TrainingLog> = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(out.join("logs")) {
        for e in entries.flatten() {
            let p = e.path();
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                let log = TrainingLog::from_jsonl(&fs::read_to_string(&p)?)
                    .with_context(|| format!("validating {}", p.display()))?;
                logs.insert(stem.to_string(), log);
            }
        }
    }

    let mut s = Provenance::of(cfg).markdown();
    if !eval_rows.is_empty() {
        let r = EvalReport {
            provenance: Provenance::of(cfg),
            rows: eval_rows,
        };
        s.push_str(r.markdown().split_once("-->\n\n").map_or("", |x| x.1));
        s.push('\n');
    }
    if let Some(b) = bias {
        s.push_str(b.markdown().split_once("-->\n\n").map_or("", |x| x.1));
        s.push('\n');
    }
    if !logs.is_empty() {
        s.push_str("## Training logs\n\n| Run | Steps | Final loss | Spikes |\n|---|---:|---:|---:|\n");
        for (name, log) in &logs {
            let last = log.steps.last().map_or(f64::NAN, |x| x.loss);
            s.push_str(&format!("| {name} | {} | {last:.4} | {} |\n", log.len(), log.spike_count()));
        }
    }
    write(&dir.join("summary.md"), &s)?;
    Ok(s)
}
