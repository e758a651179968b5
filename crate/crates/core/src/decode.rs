//! Greedy generation with a length limit derived from the dev set.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::audio::StackedSequence;
use crate::error::{Error, Result};
use crate::model::AsrModel;
use crate::text::{TokenId, Tokenizer};

pub const DEFAULT_FACTOR: f64 = 1.25;
pub const HARD_CAP: usize = 444;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLimits {
    /// Longest dev transcription in tokens, end token included.
    pub dev_max_tokens: usize,
    pub factor: f64,
    pub hard_cap: usize,
}

impl GenerationLimits {
    pub fn new(dev_max_tokens: usize) -> Self {
        Self {
            dev_max_tokens,
            factor: DEFAULT_FACTOR,
            hard_cap: HARD_CAP,
        }
    }

    /// `min(hard_cap, floor(factor * dev_max_tokens))`, at least 1.
    pub fn effective(&self) -> usize {
        let scaled = (self.factor * self.dev_max_tokens as f64).floor() as usize;
        scaled.min(self.hard_cap).max(1)
    }
}

/// Longest dev transcription in tokens, counting the single end token.
pub fn dev_max_tokens<S: AsRef<str>>(dev: &[S], tokenizer: &Tokenizer) -> Result<usize> {
    dev.iter()
        .map(|t| tokenizer.encode(t.as_ref()).len() + 1)
        .max()
        .ok_or(Error::EmptyDevSet)
}

/// `floor(factor * L)` where `L` is the longest dev transcription in tokens
/// including the end token.
pub fn max_gen_tokens<S: AsRef<str>>(dev: &[S], tokenizer: &Tokenizer, factor: f64) -> Result<usize> {
    let l = dev_max_tokens(dev, tokenizer)?;
    Ok((factor * l as f64).floor() as usize)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(row: ArrayView1<'_, f64>) -> TokenId {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Greedy decoding after `<bos>`, the audio span and `prefix_ids[1..]`
/// (`prefix_ids[0]` is `<bos>`). Stops at `eos_id` or after `limit`
/// tokens; the end token is not returned.
pub fn greedy_decode(
    model: &AsrModel,
    audio: &StackedSequence,
    prefix_ids: &[TokenId],
    limit: usize,
    eos_id: TokenId,
) -> Result<Vec<TokenId>> {
    let start = model.transcript_start(audio.len(), prefix_ids.len());
    let max = model.decoder.config.max_positions;
    if start + limit > max {
        return Err(Error::SequenceTooLong {
            len: start + limit,
            max,
        });
    }
    if limit == 0 {
        return Ok(Vec::new());
    }
    let inf = model.decoder.inference();
    let mut state = inf.new_state();
    let embeddings = model.embed(audio, prefix_ids)?;
    let positions = model.positions(audio.len(), prefix_ids.len(), prefix_ids.len());
    let mut logits = None;
    for (row, &pos) in embeddings.rows().into_iter().zip(&positions) {
        logits = Some(inf.step_at(&mut state, row, pos)?);
    }
    let mut logits = logits.ok_or(Error::EmptyMask)?;
    let mut out = Vec::new();
    while out.len() < limit {
        let next = argmax_lowest(logits.view());
        if next == eos_id {
            break;
        }
        out.push(next);
        if out.len() == limit {
            break;
        }
        logits = inf.step_at(&mut state, inf.token_embedding(next), start + out.len() - 1)?;
    }
    Ok(out)
}
