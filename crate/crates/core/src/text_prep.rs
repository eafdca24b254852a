//! Offset-preserving text normalization and whitespace tokenization.
//!
//! Normalization only ever *inserts* spaces or *replaces* whitespace with a
//! space, so every original character keeps exactly one position in the
//! normalized string. The per-character map lets token-level decisions be
//! projected back onto the original character offsets.

use std::collections::BTreeSet;

use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

/// A post as it appears in the data: original text plus the gold toxic
/// character offsets (code-point indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPost {
    pub text: String,
    pub gold: BTreeSet<usize>,
}

impl RawPost {
    pub fn new(text: impl Into<String>, gold: impl IntoIterator<Item = usize>) -> Result<Self> {
        let text = text.into();
        let gold: BTreeSet<usize> = gold.into_iter().collect();
        let len = text.chars().count();
        if let Some(&bad) = gold.iter().find(|&&g| g >= len) {
            return Err(Error::Invalid(format!(
                "gold offset {bad} out of range for text of {len} characters"
            )));
        }
        Ok(RawPost { text, gold })
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Normalized text with provenance: `map[j]` is the original index of
/// normalized character `j`, or `None` for an inserted space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    chars: Vec<char>,
    map: Vec<Option<usize>>,
}

impl NormalizedText {
    /// Wraps `text` unchanged, with an identity map.
    pub fn identity(text: &str) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let map = (0..chars.len()).map(Some).collect();
        NormalizedText { chars, map }
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn map(&self) -> &[Option<usize>] {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

/// A maximal run of non-space characters. All bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub norm_start: usize,
    pub norm_end: usize,
    pub orig_start: usize,
    pub orig_end: usize,
}

impl Token {
    pub fn orig_len(&self) -> usize {
        self.orig_end - self.orig_start + 1
    }
}

/// Unicode punctuation (P*) and symbol (S*) categories.
pub fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Punct,
    /// Apostrophe between two letters: split before it, attach to what follows.
    Clitic,
    Word,
}

fn classify(chars: &[char]) -> Vec<CharClass> {
    (0..chars.len())
        .map(|i| {
            let c = chars[i];
            if c.is_whitespace() {
                CharClass::Space
            } else if is_apostrophe(c)
                && i > 0
                && chars[i - 1].is_alphabetic()
                && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
            {
                CharClass::Clitic
            } else if is_punctuation(c) {
                CharClass::Punct
            } else {
                CharClass::Word
            }
        })
        .collect()
}

/// Whitespace becomes a single space each (runs are kept), punctuation and
/// symbols are separated from neighbouring characters, and in-word
/// apostrophes split a contraction (`don't` → `don 't`).
pub fn normalize(text: &str) -> NormalizedText {
    let original: Vec<char> = text.chars().collect();
    let classes = classify(&original);
    let mut chars = Vec::with_capacity(original.len() + original.len() / 4);
    let mut map = Vec::with_capacity(chars.capacity());

    for (i, (&c, &class)) in original.iter().zip(&classes).enumerate() {
        if i > 0 {
            let prev = classes[i - 1];
            let needs_gap = prev != CharClass::Space
                && class != CharClass::Space
                && (prev == CharClass::Punct
                    || class == CharClass::Punct
                    || class == CharClass::Clitic);
            if needs_gap {
                chars.push(' ');
                map.push(None);
            }
        }
        chars.push(if class == CharClass::Space { ' ' } else { c });
        map.push(Some(i));
    }
    NormalizedText { chars, map }
}

/// Splits on whitespace. Works on normalized text as well as on an
/// [`NormalizedText::identity`] wrapper around raw text.
pub fn tokenize(nt: &NormalizedText) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let n = nt.chars.len();
    for j in 0..=n {
        let is_gap = j == n || nt.chars[j].is_whitespace();
        match (start, is_gap) {
            (None, false) => start = Some(j),
            (Some(s), true) => {
                let e = j - 1;
                // Only spaces are ever inserted, so token characters always have an origin.
                let orig_start = nt.map[s].expect("token start has an origin");
                let orig_end = nt.map[e].expect("token end has an origin");
                tokens.push(Token {
                    surface: nt.chars[s..=e].iter().collect(),
                    norm_start: s,
                    norm_end: e,
                    orig_start,
                    orig_end,
                });
                start = None;
            }
            _ => {}
        }
    }
    tokens
}

/// Maps normalized positions back to original offsets; inserted characters vanish.
pub fn project_back(nt: &NormalizedText, norm_indices: &BTreeSet<usize>) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for &j in norm_indices {
        let origin = nt.map.get(j).ok_or_else(|| {
            Error::Invalid(format!(
                "normalized index {j} out of range (length {})",
                nt.map.len()
            ))
        })?;
        if let Some(o) = origin {
            out.insert(*o);
        }
    }
    Ok(out)
}

/// Tokens of a post, with or without normalization.
pub fn prepare(text: &str, use_preprocessing: bool) -> Vec<Token> {
    if use_preprocessing {
        tokenize(&normalize(text))
    } else {
        tokenize(&NormalizedText::identity(text))
    }
}
