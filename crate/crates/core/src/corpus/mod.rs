//! Synthetic corpora in four roles, keyword proposal and voting, video
//! filtering and the training mixes used for the dataset-bias study.

pub mod filter;
pub mod keywords;

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use filter::{alpha_ratio, filter_videos, scratch_transcribe, VideoStats};
pub use keywords::{propose_keywords, tally_votes, true_keywords, vote_keywords, KeywordVote, ProposerConfig};

use crate::audio::{synth_features, FeatureSequence};
use crate::error::{Error, Result};
use crate::eval::{error_rate, Unit};
use crate::lexicon::SyntheticLexicon;
use crate::text::{normalize, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Short read speech, clean labels.
    #[serde(rename = "cv-like")]
    CvLike,
    /// English read speech.
    #[serde(rename = "ls-like")]
    LsLike,
    /// Large corpus whose labels sometimes lose their ending.
    #[serde(rename = "r-like")]
    RLike,
    /// Video clips with per-video keywords.
    #[serde(rename = "y-like")]
    YLike,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::CvLike => "cv-like",
            Role::LsLike => "ls-like",
            Role::RLike => "r-like",
            Role::YLike => "y-like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// How the Y-like training corpus enters the mix. It is always shown twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordMode {
    /// Both copies without keywords.
    None,
    /// One copy with keywords, one without.
    Duplicated,
    /// Both copies with keywords.
    KeywordsOnly,
}

/// One clip. `audio_text` is what the features encode; `text` is the stored
/// label, which may differ (truncated labels, bad captions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub video_id: Option<String>,
    pub lang: Language,
    pub text: String,
    pub keywords: Option<Vec<String>>,
    pub feat_seed: u64,
    pub role: Role,
    pub audio_text: String,
    pub split: Split,
    pub noise_sigma: f64,
}

impl Utterance {
    pub fn features(&self, lexicon: &SyntheticLexicon) -> Result<FeatureSequence> {
        synth_features(&self.audio_text, lexicon, self.noise_sigma, self.feat_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YLikeOptions {
    /// Homonym words chosen as the topic of each video.
    pub homonyms_per_video: usize,
    /// Probability that a word slot is filled with a topic word.
    pub homonym_rate: f64,
    /// Trailing members of every homonym group reserved for dev/test.
    pub held_out_members: usize,
    pub keyword_runs: usize,
    pub proposer: ProposerConfig,
    /// Videos captioned in romanization.
    pub english_heavy_videos: usize,
    /// Videos whose captions do not match the audio.
    pub bad_caption_videos: usize,
}

impl Default for YLikeOptions {
    fn default() -> Self {
        Self {
            homonyms_per_video: 3,
            homonym_rate: 0.3,
            held_out_members: 2,
            keyword_runs: 5,
            proposer: ProposerConfig::default(),
            english_heavy_videos: 0,
            bad_caption_videos: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub role: Role,
    pub split: Split,
    pub language: Language,
    pub n_videos: usize,
    pub clips_per_video: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub truncation_prob: f64,
    pub truncation_frac: f64,
    pub noise_sigma: f64,
    /// Fractional slice `[from, to)` of the plain vocabulary this corpus
    /// draws from.
    pub plain_vocab: (f64, f64),
    pub y: YLikeOptions,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::new(Role::CvLike, Split::Train, 0, 1)
    }
}

impl CorpusSpec {
    pub fn new(role: Role, split: Split, n_videos: usize, clips_per_video: usize) -> Self {
        Self {
            role,
            split,
            language: if role == Role::LsLike { Language::En } else { Language::Ja },
            n_videos,
            clips_per_video,
            min_words: 4,
            max_words: 7,
            truncation_prob: 0.0,
            truncation_frac: 0.3,
            noise_sigma: 0.1,
            plain_vocab: (0.0, 1.0),
            y: YLikeOptions::default(),
        }
    }

    pub fn n_utterances(&self) -> usize {
        self.n_videos * self.clips_per_video
    }

    pub fn validate(&self, lexicon: &SyntheticLexicon) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleConfig(m));
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!("word range {}..={} is empty", self.min_words, self.max_words));
        }
        if !(0.0..=1.0).contains(&self.truncation_prob) || !(0.0..1.0).contains(&self.truncation_frac) {
            return bad("truncation_prob must be in [0, 1] and truncation_frac in [0, 1)".into());
        }
        if self.plain_words(lexicon).is_empty() {
            return bad(format!("plain vocabulary slice {:?} is empty", self.plain_vocab));
        }
        if self.role == Role::YLike {
            let y = &self.y;
            if y.homonyms_per_video > lexicon.homonym_groups.len() {
                return bad(format!(
                    "{} topic words per video but only {} homonym groups",
                    y.homonyms_per_video,
                    lexicon.homonym_groups.len()
                ));
            }
            let smallest = lexicon.homonym_groups.iter().map(Vec::len).min().unwrap_or(0);
            if y.held_out_members == 0 || y.held_out_members >= smallest {
                return bad(format!(
                    "held_out_members must be in 1..{smallest} for groups of {smallest}"
                ));
            }
            if y.keyword_runs == 0 {
                return bad("keyword_runs must be positive".into());
            }
            if y.english_heavy_videos + y.bad_caption_videos > self.n_videos {
                return bad("more special videos than videos".into());
            }
        }
        Ok(())
    }

    fn plain_words(&self, lexicon: &SyntheticLexicon) -> Vec<usize> {
        let all = lexicon.plain_words();
        let n = all.len() as f64;
        let from = (self.plain_vocab.0 * n).round() as usize;
        let to = ((self.plain_vocab.1 * n).round() as usize).min(all.len());
        all.get(from..to).map(<[usize]>::to_vec).unwrap_or_default()
    }
}

/// SplitMix64 finalizer over a seed and two indices.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Drops the final `ceil(frac * len)` characters.
pub fn truncate_label(text: &str, frac: f64) -> String {
    let chars: Vec<char> = text.chars().collect();
    let drop = (frac * chars.len() as f64).ceil() as usize;
    chars[..chars.len() - drop.min(chars.len())].iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VideoKind {
    Normal,
    EnglishHeavy,
    BadCaption,
}

pub fn generate_corpus(spec: &CorpusSpec, lexicon: &SyntheticLexicon, seed: u64) -> Result<Vec<Utterance>> {
    spec.validate(lexicon)?;
    let mut kinds = vec![VideoKind::Normal; spec.n_videos];
    if spec.role == Role::YLike {
        let special = spec.y.english_heavy_videos + spec.y.bad_caption_videos;
        for (i, k) in kinds.iter_mut().take(special).enumerate() {
            *k = if i < spec.y.english_heavy_videos {
                VideoKind::EnglishHeavy
            } else {
                VideoKind::BadCaption
            };
        }
        kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX, 0)));
    }
    let plain = spec.plain_words(lexicon);
    let videos: Vec<Vec<Utterance>> = kinds
        .par_iter()
        .enumerate()
        .map(|(v, &kind)| generate_video(spec, lexicon, &plain, kind, v, seed))
        .collect();
    let mut out: Vec<Utterance> = videos.into_iter().flatten().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn generate_video(
    spec: &CorpusSpec,
    lexicon: &SyntheticLexicon,
    plain: &[usize],
    kind: VideoKind,
    v: usize,
    seed: u64,
) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, v as u64, 1));
    let is_y = spec.role == Role::YLike;
    let topic: Vec<usize> = if is_y {
        let mut groups: Vec<usize> = (0..lexicon.homonym_groups.len()).collect();
        groups.shuffle(&mut rng);
        groups
            .into_iter()
            .take(spec.y.homonyms_per_video)
            .map(|g| {
                let members = &lexicon.homonym_groups[g];
                let train_members = members.len() - spec.y.held_out_members;
                let range = match spec.split {
                    Split::Train => 0..train_members,
                    _ => train_members..members.len(),
                };
                members[rng.random_range(range)]
            })
            .collect()
    } else {
        Vec::new()
    };

    let prefix = format!("{}-{}", spec.role.name(), spec.split.name());
    let video_id = is_y.then(|| format!("{prefix}-v{v:04}"));
    let mut clips = Vec::with_capacity(spec.clips_per_video);
    let mut video_words = Vec::new();
    for c in 0..spec.clips_per_video {
        let n = rng.random_range(spec.min_words..=spec.max_words);
        let words: Vec<usize> = (0..n)
            .map(|_| {
                if !topic.is_empty() && rng.random_bool(spec.y.homonym_rate) {
                    topic[rng.random_range(0..topic.len())]
                } else {
                    plain[rng.random_range(0..plain.len())]
                }
            })
            .collect();
        video_words.extend_from_slice(&words);
        let audio_text = lexicon.join(&words, spec.language);
        let text = match kind {
            VideoKind::Normal => {
                if spec.truncation_prob > 0.0 && rng.random_bool(spec.truncation_prob) {
                    truncate_label(&audio_text, spec.truncation_frac)
                } else {
                    audio_text.clone()
                }
            }
            VideoKind::EnglishHeavy => lexicon.join(&words, Language::En),
            VideoKind::BadCaption => {
                let other: Vec<usize> = (0..n).map(|_| plain[rng.random_range(0..plain.len())]).collect();
                lexicon.join(&other, spec.language)
            }
        };
        let id = match &video_id {
            Some(vid) => format!("{vid}-c{c:03}"),
            None => format!("{prefix}-{:06}", v * spec.clips_per_video + c),
        };
        clips.push(Utterance {
            id,
            video_id: video_id.clone(),
            lang: spec.language,
            text,
            keywords: None,
            feat_seed: mix_seed(seed, v as u64, 1000 + c as u64),
            role: spec.role,
            audio_text,
            split: spec.split,
            noise_sigma: spec.noise_sigma,
        });
    }

    if is_y {
        let runs: Vec<Vec<String>> = (0..spec.y.keyword_runs)
            .map(|r| {
                propose_keywords(&video_words, lexicon, &spec.y.proposer, mix_seed(seed, v as u64, 2 + r as u64))
                    .into_iter()
                    .map(|w| lexicon.written(w, spec.language))
                    .collect()
            })
            .collect();
        let kept = vote_keywords(&runs, spec.language);
        let keywords = (!kept.is_empty()).then_some(kept);
        for c in &mut clips {
            c.keywords = keywords.clone();
        }
    }
    clips
}

/// Proxy CER (scratch transcriber against stored labels, capped at 1) and
/// alphabetic ratio of one video's clips.
pub fn video_stats(clips: &[&Utterance], lexicon: &SyntheticLexicon) -> Result<VideoStats> {
    let mut pairs = Vec::with_capacity(clips.len());
    let mut all_text = String::new();
    for u in clips {
        let fs = u.features(lexicon)?;
        let hyp = scratch_transcribe(&fs, lexicon, u.lang);
        pairs.push((normalize(&u.text, u.lang).text, normalize(&hyp, u.lang).text));
        all_text.push_str(&u.text);
    }
    let cer = match error_rate(&pairs, Unit::Char) {
        Ok(r) => (r.rate / 100.0).min(1.0),
        Err(Error::EmptyReferenceCorpus) => 1.0,
        Err(e) => return Err(e),
    };
    Ok(VideoStats {
        proxy_cer: cer,
        alpha_ratio: alpha_ratio(&all_text),
    })
}

/// Applies the video filters; utterances without a video id pass through.
/// Returns the kept utterances and the per-video statistics.
pub fn filter_corpus(
    utterances: Vec<Utterance>,
    lexicon: &SyntheticLexicon,
) -> Result<(Vec<Utterance>, Vec<(String, VideoStats)>)> {
    let mut ids: Vec<&str> = utterances.iter().filter_map(|u| u.video_id.as_deref()).collect();
    ids.dedup();
    let stats: Vec<(String, VideoStats)> = ids
        .par_iter()
        .map(|&vid| {
            let clips: Vec<&Utterance> = utterances.iter().filter(|u| u.video_id.as_deref() == Some(vid)).collect();
            video_stats(&clips, lexicon).map(|s| (vid.to_string(), s))
        })
        .collect::<Result<_>>()?;
    let kept: std::collections::BTreeSet<String> = filter_videos(&stats).into_iter().collect();
    let out = utterances
        .into_iter()
        .filter(|u| u.video_id.as_ref().is_none_or(|v| kept.contains(v)))
        .collect();
    Ok((out, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub role: Role,
    pub utterances: Vec<Utterance>,
}

/// Training set from the train corpora. The single Y-like corpus appears
/// twice, with keywords according to `mode`; the others appear once
/// without keywords. Copies get `#1`/`#2` id suffixes.
pub fn compose_training_mix(corpora: &[Corpus], mode: KeywordMode) -> Result<Vec<Utterance>> {
    let y_count = corpora.iter().filter(|c| c.role == Role::YLike).count();
    if y_count != 1 {
        return Err(Error::MissingYLikeCorpus(y_count));
    }
    let mut out = Vec::new();
    for c in corpora {
        if c.role != Role::YLike {
            out.extend(c.utterances.iter().map(|u| Utterance {
                keywords: None,
                ..u.clone()
            }));
            continue;
        }
        let with = match mode {
            KeywordMode::None => [false, false],
            KeywordMode::Duplicated => [true, false],
            KeywordMode::KeywordsOnly => [true, true],
        };
        for (copy, keep) in with.into_iter().enumerate() {
            out.extend(c.utterances.iter().map(|u| Utterance {
                id: format!("{}#{}", u.id, copy + 1),
                keywords: if keep { u.keywords.clone() } else { None },
                ..u.clone()
            }));
        }
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(utterances: &[Utterance], mut w: W) -> Result<()> {
    for u in utterances {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
