//! Synthetic pronunciation lexicon with engineered homonyms.
//!
//! A word is a code of `code_len` acoustic symbols drawn from
//! `1..alphabet_size`; symbol 0 is reserved for the silence frame that
//! closes every word. Each symbol is spelled with one hiragana. Homonyms
//! share a code and differ only in how the final syllable is written:
//! hiragana, katakana, or a kanji read the same way. Member 0 of a group is
//! the all-hiragana spelling.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Language;

const ROMAJI: [&str; 18] = [
    "a", "i", "u", "e", "o", "ka", "ki", "ku", "ke", "ko", "sa", "shi", "su", "se", "so", "ta",
    "chi", "tsu",
];
const HIRAGANA: [char; 18] = [
    'あ', 'い', 'う', 'え', 'お', 'か', 'き', 'く', 'け', 'こ', 'さ', 'し', 'す', 'せ', 'そ', 'た',
    'ち', 'つ',
];
const KATAKANA: [char; 18] = [
    'ア', 'イ', 'ウ', 'エ', 'オ', 'カ', 'キ', 'ク', 'ケ', 'コ', 'サ', 'シ', 'ス', 'セ', 'ソ', 'タ',
    'チ', 'ツ',
];

/// Kanji used as alternative spellings of a final syllable. A kanji may end
/// words of several groups; the hiragana stem keeps surfaces unique.
const KANJI: &str = "天狗東京山川田中本日月火水木金土石花草竹\
                     米糸貝車雨雪風雲星空海池森林村町市駅道橋\
                     店門窓壁床庭畑島岩谷坂港城寺宮神仏鬼龍虎\
                     馬牛羊鳥魚犬猫虫桜梅松杉菊竜亀鶴鷹熊鹿狐\
                     狸猿豆麦茶酒塩糖油紙布絹綿鉄銅銀玉珠鏡剣";

/// Largest supported alphabet, silence symbol included.
pub const MAX_ALPHABET: usize = ROMAJI.len() + 1;
pub const SILENCE: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconWord {
    pub surface: String,
    pub code: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub n_words: usize,
    pub homonym_group_count: usize,
    pub members_per_group: usize,
    pub code_len: usize,
    pub alphabet_size: usize,
    pub seed: u64,
}

impl Default for LexiconSpec {
    fn default() -> Self {
        Self {
            n_words: 10,
            homonym_group_count: 2,
            members_per_group: 2,
            code_len: 3,
            alphabet_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconRepr {
    words: Vec<LexiconWord>,
    homonym_groups: Vec<Vec<usize>>,
    alphabet_size: usize,
    code_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "LexiconRepr", into = "LexiconRepr")]
pub struct SyntheticLexicon {
    pub words: Vec<LexiconWord>,
    /// Word indices sharing one code; member 0 is the all-hiragana spelling.
    pub homonym_groups: Vec<Vec<usize>>,
    pub alphabet_size: usize,
    pub code_len: usize,
    by_surface: HashMap<String, usize>,
    by_romaji: HashMap<String, Vec<u8>>,
    by_code: HashMap<Vec<u8>, usize>,
    group_of: Vec<Option<usize>>,
}

impl From<LexiconRepr> for SyntheticLexicon {
    fn from(r: LexiconRepr) -> Self {
        Self::from_parts(r.words, r.homonym_groups, r.alphabet_size, r.code_len)
    }
}

impl From<SyntheticLexicon> for LexiconRepr {
    fn from(l: SyntheticLexicon) -> Self {
        LexiconRepr {
            words: l.words,
            homonym_groups: l.homonym_groups,
            alphabet_size: l.alphabet_size,
            code_len: l.code_len,
        }
    }
}

impl PartialEq for SyntheticLexicon {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words
            && self.homonym_groups == other.homonym_groups
            && self.alphabet_size == other.alphabet_size
            && self.code_len == other.code_len
    }
}

/// All-hiragana spelling of a code.
pub fn spell(code: &[u8]) -> String {
    code.iter().map(|&s| HIRAGANA[s as usize - 1]).collect()
}

/// Spelling of a code whose final syllable is written as `last`.
pub fn spell_with_last(code: &[u8], last: char) -> String {
    let mut s = spell(&code[..code.len() - 1]);
    s.push(last);
    s
}

fn kanji_pool() -> Vec<char> {
    KANJI.chars().filter(|c| !c.is_whitespace()).collect()
}

pub fn romanize(code: &[u8]) -> String {
    code.iter().map(|&s| ROMAJI[s as usize - 1]).collect()
}

impl SyntheticLexicon {
    pub fn from_parts(
        words: Vec<LexiconWord>,
        homonym_groups: Vec<Vec<usize>>,
        alphabet_size: usize,
        code_len: usize,
    ) -> Self {
        let mut by_surface = HashMap::new();
        let mut by_romaji = HashMap::new();
        let mut by_code = HashMap::new();
        let mut group_of = vec![None; words.len()];
        for (g, members) in homonym_groups.iter().enumerate() {
            for &m in members {
                group_of[m] = Some(g);
            }
        }
        for (i, w) in words.iter().enumerate() {
            by_surface.insert(w.surface.clone(), i);
            by_romaji.insert(romanize(&w.code), w.code.clone());
            // first word of a code is its canonical (member 0 for groups)
            by_code.entry(w.code.clone()).or_insert(i);
        }
        Self {
            words,
            homonym_groups,
            alphabet_size,
            code_len,
            by_surface,
            by_romaji,
            by_code,
            group_of,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, surface: &str) -> Option<usize> {
        self.by_surface.get(surface).copied()
    }

    pub fn group_of(&self, word: usize) -> Option<usize> {
        self.group_of[word]
    }

    pub fn is_homonym(&self, word: usize) -> bool {
        self.group_of[word].is_some()
    }

    /// Code for a kana surface or a romanized form.
    pub fn code_of(&self, segment: &str) -> Option<&[u8]> {
        if let Some(&i) = self.by_surface.get(segment) {
            return Some(&self.words[i].code);
        }
        self.by_romaji.get(segment).map(Vec::as_slice)
    }

    /// Word index of the canonical spelling of a code.
    pub fn canonical_for_code(&self, code: &[u8]) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    /// Non-homonym words, the general vocabulary.
    pub fn plain_words(&self) -> Vec<usize> {
        (0..self.words.len()).filter(|&i| !self.is_homonym(i)).collect()
    }

    /// Surface form in the writing system of `language`: kana for Japanese,
    /// romanization for English.
    pub fn written(&self, word: usize, language: Language) -> String {
        match language {
            Language::Ja => self.words[word].surface.clone(),
            Language::En => romanize(&self.words[word].code),
        }
    }

    /// Joins words the way a normalized transcription of `language` looks.
    pub fn join(&self, words: &[usize], language: Language) -> String {
        let sep = match language {
            Language::Ja => "",
            Language::En => " ",
        };
        words
            .iter()
            .map(|&w| self.written(w, language))
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Splits text into codes: whitespace-delimited segments first, and
    /// greedy longest match inside segments that are not words themselves.
    pub fn segment(&self, text: &str) -> Result<Vec<Vec<u8>>> {
        let mut codes = Vec::new();
        for seg in text.split_whitespace() {
            if let Some(c) = self.code_of(seg) {
                codes.push(c.to_vec());
                continue;
            }
            let chars: Vec<char> = seg.chars().collect();
            let mut start = 0;
            while start < chars.len() {
                let mut found = None;
                for end in (start + 1..=chars.len()).rev() {
                    let piece: String = chars[start..end].iter().collect();
                    if let Some(c) = self.code_of(&piece) {
                        found = Some((end, c.to_vec()));
                        break;
                    }
                }
                match found {
                    Some((end, c)) => {
                        codes.push(c);
                        start = end;
                    }
                    None => return Err(Error::UnknownWord(seg.to_string())),
                }
            }
        }
        Ok(codes)
    }
}

pub fn build_lexicon(spec: &LexiconSpec) -> Result<SyntheticLexicon> {
    let LexiconSpec {
        n_words,
        homonym_group_count: groups,
        members_per_group: members,
        code_len,
        alphabet_size,
        seed,
    } = *spec;
    let infeasible = |m: String| Err(Error::InfeasibleConfig(m));
    if !(2..=MAX_ALPHABET).contains(&alphabet_size) {
        return infeasible(format!("alphabet_size must be in 2..={MAX_ALPHABET}"));
    }
    if code_len == 0 || code_len > 16 {
        return infeasible("code_len must be in 1..=16".into());
    }
    let kanji = kanji_pool();
    if members < 2 || members > kanji.len() + 2 {
        return infeasible(format!("members_per_group must be in 2..={}", kanji.len() + 2));
    }
    if groups * 2 > n_words || groups * members > n_words {
        return infeasible(format!(
            "{groups} groups of {members} do not fit in {n_words} words"
        ));
    }
    let distinct_codes = groups + n_words - groups * members;
    let capacity = (alphabet_size as f64 - 1.0).powi(code_len as i32);
    if distinct_codes as f64 > capacity / 2.0 {
        return infeasible(format!(
            "{distinct_codes} distinct codes requested from a space of {capacity}"
        ));
    }
    let repeat_free: f64 = (0..code_len).map(|i| (alphabet_size - 1).saturating_sub(i) as f64).product();
    if groups as f64 > repeat_free / 2.0 {
        return infeasible(format!(
            "{groups} homonym groups need codes without repeated symbols; only {repeat_free} exist"
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    // homonym codes never repeat a symbol, so each character of a keyword
    // spelling has a unique sound within the word
    let mut fresh_code = |rng: &mut ChaCha8Rng, distinct: bool| loop {
        let c: Vec<u8> = (0..code_len)
            .map(|_| rng.random_range(1..alphabet_size as u8))
            .collect();
        if distinct && c.iter().collect::<BTreeSet<_>>().len() < c.len() {
            continue;
        }
        if seen.insert(c.clone()) {
            return c;
        }
    };

    let mut words = Vec::with_capacity(n_words);
    let mut homonym_groups = Vec::with_capacity(groups);
    for _ in 0..groups {
        let code = fresh_code(&mut rng, true);
        let last = code[code_len - 1] as usize - 1;
        let mut pool = kanji.clone();
        pool.shuffle(&mut rng);
        let finals = [HIRAGANA[last], KATAKANA[last]]
            .into_iter()
            .chain(pool)
            .take(members);
        let start = words.len();
        for c in finals {
            words.push(LexiconWord {
                surface: spell_with_last(&code, c),
                code: code.clone(),
            });
        }
        homonym_groups.push((start..words.len()).collect());
    }
    while words.len() < n_words {
        let code = fresh_code(&mut rng, false);
        words.push(LexiconWord {
            surface: spell(&code),
            code,
        });
    }
    Ok(SyntheticLexicon::from_parts(
        words,
        homonym_groups,
        alphabet_size,
        code_len,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_requested_groups() {
        let lex = build_lexicon(&LexiconSpec {
            n_words: 10,
            homonym_group_count: 2,
            code_len: 3,
            alphabet_size: 16,
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(lex.len(), 10);
        assert_eq!(lex.homonym_groups.len(), 2);
        for g in &lex.homonym_groups {
            assert!(g.len() >= 2);
            let code = &lex.words[g[0]].code;
            for &m in g {
                assert_eq!(&lex.words[m].code, code);
            }
            let surfaces: BTreeSet<_> = g.iter().map(|&m| &lex.words[m].surface).collect();
            assert_eq!(surfaces.len(), g.len());
        }
        let surfaces: BTreeSet<_> = lex.words.iter().map(|w| &w.surface).collect();
        assert_eq!(surfaces.len(), lex.len());
        let codes: BTreeSet<_> = lex.plain_words().iter().map(|&i| lex.words[i].code.clone()).collect();
        assert_eq!(codes.len(), lex.plain_words().len());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = LexiconSpec {
            n_words: 40,
            homonym_group_count: 6,
            members_per_group: 3,
            seed: 11,
            ..Default::default()
        };
        let a = build_lexicon(&spec).unwrap();
        let b = build_lexicon(&spec).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let c: SyntheticLexicon = serde_json::from_str(&json).unwrap();
        assert_eq!(a, c);
        assert_eq!(c.index_of(&a.words[5].surface), Some(5));
    }

    #[test]
    fn rejects_infeasible_configs() {
        let bad = LexiconSpec {
            n_words: 3,
            homonym_group_count: 2,
            ..Default::default()
        };
        assert!(matches!(build_lexicon(&bad), Err(Error::InfeasibleConfig(_))));
        let bad = LexiconSpec {
            alphabet_size: 40,
            ..Default::default()
        };
        assert!(build_lexicon(&bad).is_err());
    }

    #[test]
    fn segments_spaced_unspaced_and_romanized_text() {
        let lex = build_lexicon(&LexiconSpec {
            n_words: 12,
            homonym_group_count: 2,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let words = [0, 5, 9];
        let ja = lex.join(&words, Language::Ja);
        let en = lex.join(&words, Language::En);
        let expected: Vec<Vec<u8>> = words.iter().map(|&w| lex.words[w].code.clone()).collect();
        assert_eq!(lex.segment(&ja).unwrap(), expected);
        assert_eq!(lex.segment(&en).unwrap(), expected);
        assert!(matches!(lex.segment("xyz"), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn homonyms_differ_only_in_the_final_character() {
        let lex = build_lexicon(&LexiconSpec {
            n_words: 100,
            homonym_group_count: 12,
            members_per_group: 8,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        for g in &lex.homonym_groups {
            let code = &lex.words[g[0]].code;
            let distinct: BTreeSet<_> = code.iter().collect();
            assert_eq!(distinct.len(), code.len());
            assert_eq!(lex.words[g[0]].surface, spell(code));
            let stem = spell(&code[..code.len() - 1]);
            let mut finals = BTreeSet::new();
            for &m in g {
                let s = &lex.words[m].surface;
                assert!(s.starts_with(&stem) && s.chars().count() == code.len());
                assert!(finals.insert(s.chars().last().unwrap()));
            }
        }
        let too_many = LexiconSpec {
            n_words: 2000,
            homonym_group_count: 2,
            members_per_group: 103,
            ..Default::default()
        };
        assert!(build_lexicon(&too_many).is_err());
    }
}
