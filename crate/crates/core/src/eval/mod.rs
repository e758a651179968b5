//! Error rates from Levenshtein alignment, keyword error rate and
//! relative reductions.

pub mod report;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditOps {
    pub insertions: u64,
    pub deletions: u64,
    pub substitutions: u64,
    pub ref_len: u64,
}

impl EditOps {
    pub fn distance(&self) -> u64 {
        self.insertions + self.deletions + self.substitutions
    }
}

impl std::ops::Add for EditOps {
    type Output = EditOps;

    fn add(self, o: EditOps) -> EditOps {
        EditOps {
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            substitutions: self.substitutions + o.substitutions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl std::iter::Sum for EditOps {
    fn sum<I: Iterator<Item = EditOps>>(iter: I) -> EditOps {
        iter.fold(EditOps::default(), |a, b| a + b)
    }
}

/// Minimal unit-cost alignment of `hyp` against `reference`. The backtrace
/// prefers a diagonal move (match or substitution), then a deletion, then
/// an insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditOps {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        d[j] = j as u32;
    }
    for i in 1..=n {
        d[i * w] = i as u32;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + u32::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = EditOps {
        ref_len: n as u64,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if d[(i - 1) * w + j - 1] + u32::from(!same) == here {
                ops.substitutions += u64::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Char,
    Word,
}

impl Unit {
    pub fn metric_name(self) -> &'static str {
        match self {
            Unit::Char => "CER",
            Unit::Word => "WER",
        }
    }
}

/// Aligns one pair at the given granularity. Words are split on single
/// spaces; characters are Unicode scalar values.
pub fn align_text(reference: &str, hyp: &str, unit: Unit) -> EditOps {
    match unit {
        Unit::Char => {
            let r: Vec<char> = reference.chars().collect();
            let h: Vec<char> = hyp.chars().collect();
            align(&r, &h)
        }
        Unit::Word => {
            let split = |s: &str| -> Vec<String> {
                if s.is_empty() {
                    Vec::new()
                } else {
                    s.split(' ').map(str::to_string).collect()
                }
            };
            align(&split(reference), &split(hyp))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub unit: Unit,
    /// CER or WER in percent.
    pub rate: f64,
    pub kwer: Option<f64>,
    pub ops: EditOps,
    pub n_utterances: usize,
}

/// Corpus-level `100 * (I + D + S) / sum |ref|`.
pub fn error_rate<R: AsRef<str> + Sync, H: AsRef<str> + Sync>(
    pairs: &[(R, H)],
    unit: Unit,
) -> Result<MetricReport> {
    let per_pair: Vec<EditOps> = pairs
        .par_iter()
        .map(|(r, h)| align_text(r.as_ref(), h.as_ref(), unit))
        .collect();
    let ops: EditOps = per_pair.into_iter().sum();
    if ops.ref_len == 0 {
        return Err(Error::EmptyReferenceCorpus);
    }
    Ok(MetricReport {
        unit,
        rate: 100.0 * ops.distance() as f64 / ops.ref_len as f64,
        kwer: None,
        ops,
        n_utterances: pairs.len(),
    })
}

/// Keywords that never occur as a substring of any training transcription.
pub fn select_eval_keywords<S: AsRef<str>>(candidates: &[Vec<String>], train: &[S]) -> BTreeSet<String> {
    candidates
        .iter()
        .flatten()
        .filter(|k| !k.is_empty() && !train.iter().any(|t| t.as_ref().contains(k.as_str())))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordItem {
    pub reference: String,
    pub hypothesis: String,
    pub keywords: Vec<String>,
}

/// `(errors, occurrences)`. Each (utterance, keyword) pair counts once when
/// the reference contains the keyword; it is an error when the hypothesis
/// does not.
pub fn kwer_counts(items: &[KeywordItem]) -> (u64, u64) {
    let mut errors = 0;
    let mut occurrences = 0;
    for it in items {
        let unique: BTreeSet<&str> = it.keywords.iter().map(String::as_str).collect();
        for k in unique {
            if !k.is_empty() && it.reference.contains(k) {
                occurrences += 1;
                if !it.hypothesis.contains(k) {
                    errors += 1;
                }
            }
        }
    }
    (errors, occurrences)
}

pub fn kwer(items: &[KeywordItem]) -> Result<f64> {
    let (errors, occurrences) = kwer_counts(items);
    if occurrences == 0 {
        return Err(Error::NoOccurrences);
    }
    Ok(100.0 * errors as f64 / occurrences as f64)
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// `100 * (old - new) / old`, rounded to two decimals.
pub fn relative_reduction(old_rate: f64, new_rate: f64) -> Result<f64> {
    if !(old_rate > 0.0) {
        return Err(Error::ZeroBaseline(old_rate));
    }
    Ok(round2(100.0 * (old_rate - new_rate) / old_rate))
}
