//! Simulated keyword proposer and the vote that keeps stable keywords.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::lexicon::SyntheticLexicon;
use crate::text::{normalize, Language};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerConfig {
    /// Probability that a true keyword is proposed in one run.
    pub p_hit: f64,
    /// Mean number of distractors per run.
    pub distractor_rate: f64,
    /// Share of distractors drawn from homonym partners of true keywords.
    pub partner_share: f64,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            p_hit: 0.7,
            distractor_rate: 1.0,
            partner_share: 0.5,
        }
    }
}

/// Keyword candidates of one video: the homonym-group words among
/// `video_words`.
pub fn true_keywords(video_words: &[usize], lexicon: &SyntheticLexicon) -> BTreeSet<usize> {
    video_words.iter().copied().filter(|&w| lexicon.is_homonym(w)).collect()
}

/// One proposer run: each true keyword with probability `p_hit`, plus a
/// Poisson number of distractors, which are never true keywords. Returns
/// word indices in proposal order.
pub fn propose_keywords(
    video_words: &[usize],
    lexicon: &SyntheticLexicon,
    config: &ProposerConfig,
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = true_keywords(video_words, lexicon);
    let mut out: Vec<usize> = truth.iter().copied().filter(|_| rng.random_bool(config.p_hit)).collect();

    let n_distract = if config.distractor_rate > 0.0 {
        Poisson::new(config.distractor_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let partners: Vec<usize> = truth
        .iter()
        .filter_map(|&w| lexicon.group_of(w))
        .flat_map(|g| lexicon.homonym_groups[g].iter().copied())
        .filter(|w| !truth.contains(w))
        .collect();
    let others: Vec<usize> = (0..lexicon.len()).filter(|w| !truth.contains(w)).collect();
    for _ in 0..n_distract {
        let w = if !partners.is_empty() && rng.random_bool(config.partner_share) {
            partners[rng.random_range(0..partners.len())]
        } else if !others.is_empty() {
            others[rng.random_range(0..others.len())]
        } else {
            break;
        };
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordVote {
    pub candidate: String,
    pub appearances: usize,
    pub runs: usize,
}

impl KeywordVote {
    /// `appearances / runs >= 1/3`, in integers.
    pub fn kept(&self) -> bool {
        3 * self.appearances >= self.runs
    }
}

/// Counts in how many runs each normalized keyword appears, ordered by
/// descending count, then lexicographically.
pub fn tally_votes(runs: &[Vec<String>], language: Language) -> Vec<KeywordVote> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for run in runs {
        let unique: BTreeSet<String> = run
            .iter()
            .map(|k| normalize(k, language).text)
            .filter(|k| !k.is_empty())
            .collect();
        for k in unique {
            *counts.entry(k).or_default() += 1;
        }
    }
    let mut votes: Vec<KeywordVote> = counts
        .into_iter()
        .map(|(candidate, appearances)| KeywordVote {
            candidate,
            appearances,
            runs: runs.len(),
        })
        .collect();
    votes.sort_by(|a, b| b.appearances.cmp(&a.appearances).then_with(|| a.candidate.cmp(&b.candidate)));
    votes
}

/// Keywords proposed in at least a third of the runs.
pub fn vote_keywords(runs: &[Vec<String>], language: Language) -> Vec<String> {
    tally_votes(runs, language)
        .into_iter()
        .filter(KeywordVote::kept)
        .map(|v| v.candidate)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{build_lexicon, LexiconSpec};

    fn runs(hits: usize, total: usize) -> Vec<Vec<String>> {
        (0..total)
            .map(|i| if i < hits { vec!["k".to_string()] } else { vec![] })
            .collect()
    }

    #[test]
    fn vote_boundaries() {
        assert_eq!(vote_keywords(&runs(1, 3), Language::Ja), vec!["k"]);
        assert!(vote_keywords(&runs(1, 6), Language::Ja).is_empty());
        assert_eq!(vote_keywords(&runs(2, 6), Language::Ja), vec!["k"]);
    }

    #[test]
    fn vote_order_and_normalization() {
        let r = vec![
            vec!["b".to_string(), "a".to_string(), "B".to_string()],
            vec!["a".to_string(), "c".to_string()],
            vec!["b!".to_string()],
        ];
        assert_eq!(vote_keywords(&r, Language::En), vec!["a", "b", "c"]);
        let t = tally_votes(&r, Language::En);
        assert_eq!(t[0].appearances, 2);
    }

    #[test]
    fn proposer_extremes() {
        let lex = build_lexicon(&LexiconSpec {
            n_words: 30,
            homonym_group_count: 4,
            members_per_group: 3,
            ..Default::default()
        })
        .unwrap();
        let words = vec![0, 3, 20, 21];
        let exact = ProposerConfig {
            p_hit: 1.0,
            distractor_rate: 0.0,
            partner_share: 0.0,
        };
        let mut got = propose_keywords(&words, &lex, &exact, 1);
        got.sort();
        assert_eq!(got, vec![0, 3]);

        let none = ProposerConfig {
            p_hit: 0.0,
            distractor_rate: 2.0,
            partner_share: 0.5,
        };
        let mut total = 0;
        for s in 0..50 {
            let got = propose_keywords(&words, &lex, &none, s);
            assert!(!got.contains(&0) && !got.contains(&3));
            total += got.len();
        }
        assert!(total > 0);
        assert_eq!(propose_keywords(&words, &lex, &none, 3), propose_keywords(&words, &lex, &none, 3));
    }
}
