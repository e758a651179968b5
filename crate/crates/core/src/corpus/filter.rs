//! Video-level quality filtering with a scratch transcriber standing in
//! for a strong external recognizer.

use serde::{Deserialize, Serialize};

use crate::audio::FeatureSequence;
use crate::lexicon::{SyntheticLexicon, SILENCE};
use crate::text::Language;

pub const MAX_PROXY_CER: f64 = 0.40;
pub const MAX_ALPHA_RATIO: f64 = 0.50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoStats {
    pub proxy_cer: f64,
    pub alpha_ratio: f64,
}

impl VideoStats {
    /// Both thresholds are inclusive.
    pub fn should_drop(&self) -> bool {
        self.proxy_cer >= MAX_PROXY_CER || self.alpha_ratio >= MAX_ALPHA_RATIO
    }
}

/// Ids of the videos that pass both filters, in input order.
pub fn filter_videos(stats: &[(String, VideoStats)]) -> Vec<String> {
    stats
        .iter()
        .filter(|(_, s)| !s.should_drop())
        .map(|(id, _)| id.clone())
        .collect()
}

/// Share of `[a-zA-Z]` among the non-whitespace characters.
pub fn alpha_ratio(text: &str) -> f64 {
    let mut alpha = 0usize;
    let mut total = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if c.is_ascii_alphabetic() {
            alpha += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        alpha as f64 / total as f64
    }
}

/// Frame-wise argmax decoding: runs of non-silence frames between silence
/// frames form a code, written with the canonical spelling of that code.
/// Unknown codes are skipped.
pub fn scratch_transcribe(fs: &FeatureSequence, lexicon: &SyntheticLexicon, language: Language) -> String {
    let mut words = Vec::new();
    let mut code = Vec::new();
    for row in fs.frames.rows() {
        let sym = row
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0 as u8;
        if sym == SILENCE {
            if let Some(w) = lexicon.canonical_for_code(&code) {
                words.push(w);
            }
            code.clear();
        } else {
            code.push(sym);
        }
    }
    if let Some(w) = lexicon.canonical_for_code(&code) {
        words.push(w);
    }
    lexicon.join(&words, language)
}
