//! Prompt templates, keyword shuffling and assembly of training examples
//! under the text-token budget.
//!
//! Sequence layout fed to the decoder:
//!
//! ```text
//! <bos> [audio embeddings] <prefix text> <transcription> <eos>
//! ```
//!
//! Audio positions carry no token ids; a [`TrainExample`] only records how
//! many embedding rows sit between `<bos>` and the prefix text.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize, Language, TokenId, Tokenizer};

pub const DEFAULT_BUDGET: usize = 300;

pub const EN_PLACEHOLDER: &str = "na";
pub const JA_PLACEHOLDER: &str = "なし";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub language: Language,
    pub keywords: Option<Vec<String>>,
    pub transcription: String,
}

impl PromptRecord {
    /// Normalizes and deduplicates keywords (first occurrence wins). An
    /// empty list after cleaning becomes `None`.
    pub fn new(language: Language, keywords: Option<Vec<String>>, transcription: impl Into<String>) -> Self {
        Self {
            language,
            keywords: keywords.and_then(|k| clean_keywords(&k, language)),
            transcription: transcription.into(),
        }
    }
}

pub fn clean_keywords(keywords: &[String], language: Language) -> Option<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(keywords.len());
    for k in keywords {
        let n = normalize(k, language).text;
        if !n.is_empty() && !out.contains(&n) {
            out.push(n);
        }
    }
    (!out.is_empty()).then_some(out)
}

struct Template {
    head: &'static str,
    separator: &'static str,
    tail: &'static str,
    placeholder: &'static str,
}

fn template(language: Language) -> Template {
    match language {
        Language::En => Template {
            head: "Language: en ; Keywords: ",
            separator: ", ",
            tail: " ; Transcription: ",
            placeholder: EN_PLACEHOLDER,
        },
        Language::Ja => Template {
            head: "言語：ja； キーワード：",
            separator: "、",
            tail: "； 書き起こし：",
            placeholder: JA_PLACEHOLDER,
        },
    }
}

pub fn keyword_separator(language: Language) -> &'static str {
    template(language).separator
}

pub fn render_prefix(language: Language, keywords: Option<&[String]>) -> String {
    let t = template(language);
    let field = match keywords {
        Some(k) if !k.is_empty() => k.join(t.separator),
        _ => t.placeholder.to_string(),
    };
    format!("{}{}{}", t.head, field, t.tail)
}

/// Returns `(prefix_text, target_text)`.
pub fn render_prompt(record: &PromptRecord) -> (String, String) {
    (
        render_prefix(record.language, record.keywords.as_deref()),
        record.transcription.clone(),
    )
}

/// Seeded Fisher-Yates permutation of the keyword list.
pub fn shuffle_keywords(keywords: &[String], seed: u64) -> Vec<String> {
    let mut out = keywords.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub audio_embed_count: usize,
    /// `[bos] ++ prefix ++ target ++ [eos]`
    pub token_ids: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    /// Prefix plus target tokens; `<bos>` and `<eos>` are not counted.
    pub total_text_tokens: usize,
    /// Index into `token_ids` of the first target token.
    pub target_start: usize,
}

impl TrainExample {
    /// Length of the full decoder input (text tokens plus audio rows).
    pub fn sequence_len(&self) -> usize {
        self.token_ids.len() + self.audio_embed_count
    }

    pub fn prefix_ids(&self) -> &[TokenId] {
        &self.token_ids[1..self.target_start]
    }

    pub fn target_ids(&self) -> &[TokenId] {
        &self.token_ids[self.target_start..self.token_ids.len() - 1]
    }
}

/// Token ids of the prompt prefix after fitting the keywords into
/// `budget - target_len` tokens. Whole keywords are dropped from the end of
/// the list while more than one remains; a single remaining keyword that
/// still overflows is cut at token granularity. Falls back to the
/// placeholder prompt when nothing of the keywords would survive.
pub fn fit_prefix(
    language: Language,
    keywords: Option<&[String]>,
    target_len: usize,
    tokenizer: &Tokenizer,
    budget: usize,
) -> Result<Vec<TokenId>> {
    let placeholder = tokenizer.encode(&render_prefix(language, None));
    if placeholder.len() + target_len > budget {
        return Err(Error::BudgetInfeasible {
            needed: placeholder.len() + target_len,
            budget,
        });
    }
    let keywords = match keywords {
        Some(k) if !k.is_empty() => k,
        _ => return Ok(placeholder),
    };

    let t = template(language);
    let mut kept = keywords.len();
    loop {
        let prefix = tokenizer.encode(&render_prefix(language, Some(&keywords[..kept])));
        if prefix.len() + target_len <= budget {
            return Ok(prefix);
        }
        if kept > 1 {
            kept -= 1;
            continue;
        }
        // one keyword left and it still overflows
        let head = tokenizer.encode(t.head);
        let tail = tokenizer.encode(t.tail);
        let room = budget - target_len;
        let keep = room.saturating_sub(head.len() + tail.len());
        if keep == 0 {
            return Ok(placeholder);
        }
        let kw = tokenizer.encode(&keywords[0]);
        let mut out = head;
        out.extend_from_slice(&kw[..keep.min(kw.len())]);
        out.extend_from_slice(&tail);
        return Ok(out);
    }
}

pub fn assemble_example(
    record: &PromptRecord,
    audio_embed_count: usize,
    tokenizer: &Tokenizer,
    budget: usize,
) -> Result<TrainExample> {
    let target = tokenizer.encode(&record.transcription);
    let prefix = fit_prefix(
        record.language,
        record.keywords.as_deref(),
        target.len(),
        tokenizer,
        budget,
    )?;

    let total_text_tokens = prefix.len() + target.len();
    let target_start = 1 + prefix.len();
    let mut token_ids = Vec::with_capacity(total_text_tokens + 2);
    token_ids.push(tokenizer.bos_id);
    token_ids.extend_from_slice(&prefix);
    token_ids.extend_from_slice(&target);
    token_ids.push(tokenizer.eos_id);

    let loss_mask = (0..token_ids.len()).map(|i| i >= target_start).collect();
    Ok(TrainExample {
        audio_embed_count,
        token_ids,
        loss_mask,
        total_text_tokens,
        target_start,
    })
}

/// `[bos] ++ prefix` for generation. The prefix is fitted so that prefix
/// plus `max_new_tokens` stays within the budget.
pub fn inference_prefix(
    language: Language,
    keywords: Option<&[String]>,
    max_new_tokens: usize,
    tokenizer: &Tokenizer,
    budget: usize,
) -> Result<Vec<TokenId>> {
    let prefix = fit_prefix(language, keywords, max_new_tokens, tokenizer, budget)?;
    let mut ids = Vec::with_capacity(prefix.len() + 1);
    ids.push(tokenizer.bos_id);
    ids.extend(prefix);
    Ok(ids)
}
