//! Conversions between character offsets, token spans and IO/BIO tag sequences.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_prep::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagScheme {
    #[default]
    Io,
    Bio,
}

impl TagScheme {
    pub fn num_tags(self) -> usize {
        match self {
            TagScheme::Io => 2,
            TagScheme::Bio => 3,
        }
    }

    pub fn tags(self) -> &'static [Tag] {
        match self {
            TagScheme::Io => &[Tag::O, Tag::I],
            TagScheme::Bio => &[Tag::O, Tag::B, Tag::I],
        }
    }

    /// Dense index of `tag` under this scheme. `B` under IO maps to `I`.
    pub fn index_of(self, tag: Tag) -> usize {
        match (self, tag) {
            (_, Tag::O) => 0,
            (TagScheme::Io, _) => 1,
            (TagScheme::Bio, Tag::B) => 1,
            (TagScheme::Bio, Tag::I) => 2,
        }
    }

    pub fn tag_at(self, index: usize) -> Tag {
        self.tags()[index]
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagScheme::Io => "io",
            TagScheme::Bio => "bio",
        })
    }
}

impl FromStr for TagScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "io" => Ok(TagScheme::Io),
            "bio" => Ok(TagScheme::Bio),
            other => Err(Error::Config(format!("unknown tag scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B,
    I,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::O => "O",
            Tag::B => "B",
            Tag::I => "I",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub scheme: TagScheme,
    pub tags: Vec<Tag>,
}

impl TagSequence {
    pub fn from_indices(scheme: TagScheme, indices: &[usize]) -> Self {
        TagSequence {
            scheme,
            tags: indices.iter().map(|&i| scheme.tag_at(i)).collect(),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.tags.iter().map(|&t| self.scheme.index_of(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Inclusive token range `[s, e]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSpan {
    pub s: usize,
    pub e: usize,
}

impl TokenSpan {
    pub fn new(s: usize, e: usize) -> Self {
        debug_assert!(s <= e);
        TokenSpan { s, e }
    }

    pub fn len(&self) -> usize {
        self.e - self.s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Overlap, containment or equality.
    pub fn clashes(&self, other: &TokenSpan) -> bool {
        self.s <= other.e && other.s <= self.e
    }
}

/// When does a token count as part of a gold span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPolicy {
    /// At least one of the token's characters is gold.
    #[default]
    Any,
    /// Strictly more than half of the token's characters are gold.
    Majority,
}

/// Result of projecting character offsets onto tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanProjection {
    pub spans: Vec<TokenSpan>,
    /// Gold offsets that fell outside every token (whitespace, or past the last token).
    pub ignored: Vec<usize>,
}

pub fn project_offsets(gold: &BTreeSet<usize>, tokens: &[Token], policy: OverlapPolicy) -> SpanProjection {
    let in_span: Vec<bool> = tokens
        .iter()
        .map(|t| {
            let hits = gold.range(t.orig_start..=t.orig_end).count();
            match policy {
                OverlapPolicy::Any => hits > 0,
                OverlapPolicy::Majority => 2 * hits > t.orig_len(),
            }
        })
        .collect();
    let last_end = tokens.last().map(|t| t.orig_end);
    let ignored = gold
        .iter()
        .copied()
        .filter(|&g| last_end.is_none_or(|end| g > end))
        .collect();
    SpanProjection {
        spans: runs(&in_span),
        ignored,
    }
}

/// Token spans covering the gold offsets: maximal runs of in-span tokens.
pub fn offsets_to_token_spans(gold: &BTreeSet<usize>, tokens: &[Token], policy: OverlapPolicy) -> Vec<TokenSpan> {
    let projection = project_offsets(gold, tokens, policy);
    if !projection.ignored.is_empty() {
        log::warn!(
            "{} gold offset(s) beyond the last token ignored (first: {})",
            projection.ignored.len(),
            projection.ignored[0]
        );
    }
    projection.spans
}

fn runs(flags: &[bool]) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (start, f) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                spans.push(TokenSpan::new(s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    spans
}

pub fn validate_spans(spans: &[TokenSpan], n: usize) -> Result<()> {
    for (k, sp) in spans.iter().enumerate() {
        if sp.s > sp.e || sp.e >= n {
            return Err(Error::Invalid(format!(
                "span ({}, {}) invalid for {n} tokens",
                sp.s, sp.e
            )));
        }
        if k > 0 && spans[k - 1].e >= sp.s {
            return Err(Error::Invalid(format!(
                "spans ({}, {}) and ({}, {}) overlap or are unsorted",
                spans[k - 1].s,
                spans[k - 1].e,
                sp.s,
                sp.e
            )));
        }
    }
    Ok(())
}

pub fn token_spans_to_tags(spans: &[TokenSpan], n: usize, scheme: TagScheme) -> Result<TagSequence> {
    validate_spans(spans, n)?;
    let mut tags = vec![Tag::O; n];
    for sp in spans {
        for (i, tag) in tags.iter_mut().enumerate().take(sp.e + 1).skip(sp.s) {
            *tag = match scheme {
                TagScheme::Bio if i == sp.s => Tag::B,
                _ => Tag::I,
            };
        }
    }
    Ok(TagSequence { scheme, tags })
}

/// Decodes tags to spans. `B` always opens a span; an `I` with nothing to
/// continue opens one as well.
pub fn tags_to_token_spans(tags: &TagSequence) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tag) in tags.tags.iter().enumerate() {
        match tag {
            Tag::O => {
                if let Some(s) = open.take() {
                    spans.push(TokenSpan::new(s, i - 1));
                }
            }
            Tag::B => {
                if let Some(s) = open.replace(i) {
                    spans.push(TokenSpan::new(s, i - 1));
                }
            }
            Tag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(TokenSpan::new(s, tags.tags.len() - 1));
    }
    spans
}

/// With `include_gaps`, a span covers every original character from its first
/// token's start through its last token's end.
pub fn token_spans_to_offsets(spans: &[TokenSpan], tokens: &[Token], include_gaps: bool) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for sp in spans {
        if include_gaps {
            out.extend(tokens[sp.s].orig_start..=tokens[sp.e].orig_end);
        } else {
            for t in &tokens[sp.s..=sp.e] {
                out.extend(t.orig_start..=t.orig_end);
            }
        }
    }
    out
}
