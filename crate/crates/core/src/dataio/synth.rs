//! Seeded synthetic corpora with planted toxic spans.
//!
//! Posts are runs of pseudo-words with one or two planted spans separated by
//! neutral words. Single-word spans are always lexicon words. Longer spans
//! depend on the mode: under [`SynthMode::Recoverable`] they are drawn from a
//! dedicated pool of phrase words that never occur outside spans, so the gold
//! is a function of the words alone; under [`SynthMode::ContextDependent`]
//! they are a lexicon word surrounded by ordinary neutral words, so only the
//! anchor word is identifiable.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Lexicon;
use crate::neural::{rng_from_seed, Rng};
use crate::text_prep::RawPost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    #[default]
    Recoverable,
    ContextDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_posts: usize,
    /// Distinct non-lexicon words.
    pub vocab_size: usize,
    pub lexicon: Vec<String>,
    /// Relative frequency of span lengths 1, 2–4 and ≥5 words.
    pub span_length_mix: [f64; 3],
    pub mode: SynthMode,
    /// Share of posts without any span.
    pub empty_fraction: f64,
}

/// Train-split span length shares: 7897, 1617 and 784 spans of 1, 2–4 and ≥5 words.
pub const DEFAULT_SPAN_MIX: [f64; 3] = [7897.0 / 10298.0, 1617.0 / 10298.0, 784.0 / 10298.0];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_posts: 1000,
            vocab_size: 200,
            lexicon: Lexicon::builtin().words().map(str::to_string).collect(),
            span_length_mix: DEFAULT_SPAN_MIX,
            mode: SynthMode::Recoverable,
            empty_fraction: 0.1,
        }
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const TRAILING: &[&str] = &["!", ".", ",", "?"];

fn pseudo_words(rng: &mut Rng, count: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if taken.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

/// A post under construction: words plus which of them are in a span.
struct Builder {
    text: String,
    gold: BTreeSet<usize>,
    len: usize,
}

impl Builder {
    fn push(&mut self, word: &str, toxic_span_continues: bool) {
        if self.len > 0 {
            self.text.push(' ');
            if toxic_span_continues {
                self.gold.insert(self.len);
            }
            self.len += 1;
        }
        let n = word.chars().count();
        self.text.push_str(word);
        self.len += n;
    }

    fn push_span(&mut self, words: &[String]) {
        for (i, w) in words.iter().enumerate() {
            let start = self.len + usize::from(self.len > 0);
            self.push(w, i > 0);
            self.gold.extend(start..start + w.chars().count());
        }
    }
}

/// Neutral word counts before, between and after the spans. In
/// context-dependent mode the post length is drawn independently of the span
/// lengths, so sentence length says nothing about span length.
fn neutral_gaps(rng: &mut Rng, mode: SynthMode, lens: &[usize]) -> Vec<usize> {
    match mode {
        SynthMode::Recoverable => {
            let first = rng.gen_range(if lens.is_empty() { 3 } else { 1 }..=5);
            std::iter::once(first).chain(lens.iter().map(|_| rng.gen_range(1..=4))).collect()
        }
        SynthMode::ContextDependent => {
            let total: usize = rng.gen_range(12..=20);
            let free = total.saturating_sub(lens.iter().sum::<usize>());
            let mut gaps = vec![1; lens.len() + 1];
            for _ in 0..free.saturating_sub(gaps.len()) {
                let i = rng.gen_range(0..gaps.len());
                gaps[i] += 1;
            }
            gaps
        }
    }
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<RawPost>> {
    if config.lexicon.is_empty() {
        return Err(Error::Config("the synthetic lexicon is empty".into()));
    }
    if config.vocab_size < 10 {
        return Err(Error::Config("the synthetic vocabulary needs at least 10 words".into()));
    }
    let mix = WeightedIndex::new(config.span_length_mix).map_err(|e| Error::Config(format!("bad span length mix: {e}")))?;
    if !(0.0..=1.0).contains(&config.empty_fraction) {
        return Err(Error::Config("empty_fraction must be in [0, 1]".into()));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut taken: BTreeSet<String> = config.lexicon.iter().cloned().collect();
    let (n_phrase, n_neutral) = match config.mode {
        SynthMode::Recoverable => (config.vocab_size / 5, config.vocab_size - config.vocab_size / 5),
        SynthMode::ContextDependent => (0, config.vocab_size),
    };
    let neutral = pseudo_words(&mut rng, n_neutral, &mut taken);
    let phrase = pseudo_words(&mut rng, n_phrase, &mut taken);

    let mut posts = Vec::with_capacity(config.n_posts);
    for _ in 0..config.n_posts {
        let n_spans = if rng.gen_bool(config.empty_fraction) {
            0
        } else {
            match config.mode {
                SynthMode::Recoverable => rng.gen_range(1..=2),
                SynthMode::ContextDependent => 1,
            }
        };
        let mut b = Builder {
            text: String::new(),
            gold: BTreeSet::new(),
            len: 0,
        };
        let lens: Vec<usize> = (0..n_spans)
            .map(|_| match mix.sample(&mut rng) {
                0 => 1,
                1 => rng.gen_range(2..=4),
                _ => rng.gen_range(5..=7),
            })
            .collect();
        let gaps = neutral_gaps(&mut rng, config.mode, &lens);
        for (i, &gap) in gaps.iter().enumerate() {
            for _ in 0..gap {
                b.push(neutral.choose(&mut rng).unwrap(), false);
            }
            let Some(&len) = lens.get(i) else { break };
            let words: Vec<String> = if len == 1 {
                vec![config.lexicon.choose(&mut rng).unwrap().clone()]
            } else {
                match config.mode {
                    SynthMode::Recoverable => (0..len).map(|_| phrase.choose(&mut rng).unwrap().clone()).collect(),
                    SynthMode::ContextDependent => {
                        let mut w: Vec<String> = (0..len).map(|_| neutral.choose(&mut rng).unwrap().clone()).collect();
                        let anchor = rng.gen_range(0..len);
                        w[anchor] = config.lexicon.choose(&mut rng).unwrap().clone();
                        w
                    }
                }
            };
            b.push_span(&words);
            if rng.gen_bool(0.2) {
                b.text.push_str(TRAILING.choose(&mut rng).unwrap());
                b.len += 1;
            }
        }
        if rng.gen_bool(0.5) {
            b.text.push('.');
        }
        posts.push(RawPost::new(b.text, b.gold)?);
    }
    Ok(posts)
}
