//! Byte-level tokenizer and the text normalizer shared by references,
//! hypotheses and keywords.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Offset between a UTF-8 byte value and its token id. Ids below the offset
/// are reserved for special tokens.
pub const BYTE_OFFSET: u32 = 2;
pub const VOCAB_SIZE: usize = 256 + BYTE_OFFSET as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Ja,
    En,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::Ja => "ja",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Byte tokenizer with two reserved ids. With `eos_equals_bos` the end token
/// reuses the begin token, the convention used when sentences are packed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    pub eos_equals_bos: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(false)
    }
}

impl Tokenizer {
    pub fn new(eos_equals_bos: bool) -> Self {
        Self {
            bos_id: 0,
            eos_id: if eos_equals_bos { 0 } else { 1 },
            eos_equals_bos,
        }
    }

    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id < BYTE_OFFSET
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.bytes().map(|b| b as TokenId + BYTE_OFFSET).collect()
    }

    /// Byte values of the non-special ids. Rejects ids outside the vocabulary.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= VOCAB_SIZE {
                return Err(Error::InvalidTokenId {
                    id,
                    vocab_size: VOCAB_SIZE,
                });
            }
            if !self.is_special(id) {
                bytes.push((id - BYTE_OFFSET) as u8);
            }
        }
        Ok(bytes)
    }

    /// Inverse of [`Tokenizer::encode`]. Generated byte runs that are not
    /// valid UTF-8 are replaced with U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedText {
    pub text: String,
    pub language: Language,
}

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

const REMOVABLE: &[char] = &[
    '.', ',', '!', '?', ';', ':', '"', '\'', '(', ')', '[', ']', '{', '}', '「', '」', '。', '、',
    '・', '！', '？',
];

pub fn is_removable(c: char) -> bool {
    REMOVABLE.contains(&c)
}

/// Lowercases ASCII, drops the removable punctuation set, collapses
/// whitespace runs and trims. For Japanese, a space between two non-ASCII
/// characters is removed as well.
pub fn normalize(text: &str, language: Language) -> NormalizedText {
    let mut collapsed: Vec<char> = Vec::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if is_removable(c) {
            continue;
        }
        if c.is_whitespace() {
            pending_space = !collapsed.is_empty();
            continue;
        }
        if pending_space {
            collapsed.push(' ');
            pending_space = false;
        }
        collapsed.push(c.to_ascii_lowercase());
    }

    let out: String = match language {
        Language::En => collapsed.into_iter().collect(),
        Language::Ja => {
            let mut s = String::with_capacity(collapsed.len() * 3);
            for (i, &c) in collapsed.iter().enumerate() {
                if c == ' ' {
                    // collapsed never starts or ends with a space
                    let prev = collapsed[i - 1];
                    let next = collapsed[i + 1];
                    if !prev.is_ascii() && !next.is_ascii() {
                        continue;
                    }
                }
                s.push(c);
            }
            s
        }
    };
    NormalizedText {
        text: out,
        language,
    }
}
