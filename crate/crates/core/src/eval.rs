//! Character-offset precision/recall/F1 with the empty-set conventions,
//! corpus aggregation, and the span-length and lexicon analyses.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span_codec::{offsets_to_token_spans, OverlapPolicy, TokenSpan};
use crate::text_prep::{prepare, Token};

pub type OffsetSet = BTreeSet<usize>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostEval {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub intersection_size: usize,
    pub pred_size: usize,
    pub gold_size: usize,
}

/// Both empty scores 1; exactly one empty scores 0.
pub fn post_f1(pred: &OffsetSet, gold: &OffsetSet) -> PostEval {
    let inter = pred.intersection(gold).count();
    let (np, ng) = (pred.len(), gold.len());
    let (precision, recall, f1) = match (np, ng) {
        (0, 0) => (1.0, 1.0, 1.0),
        (0, _) | (_, 0) => (0.0, 0.0, 0.0),
        _ => {
            let p = inter as f64 / np as f64;
            let r = inter as f64 / ng as f64;
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f)
        }
    };
    PostEval {
        precision,
        recall,
        f1,
        intersection_size: inter,
        pred_size: np,
        gold_size: ng,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Unweighted mean of per-post F1.
    #[default]
    Macro,
    /// F1 of the pooled intersection, prediction and gold counts.
    Micro,
}

pub fn corpus_f1(posts: &[(OffsetSet, OffsetSet)]) -> Result<f64> {
    corpus_f1_with(posts, Aggregation::Macro)
}

pub fn corpus_f1_with(posts: &[(OffsetSet, OffsetSet)], aggregation: Aggregation) -> Result<f64> {
    corpus_f1_iter(posts.iter().map(|(p, g)| (p, g)), aggregation)
}

fn corpus_f1_iter<'a>(posts: impl Iterator<Item = (&'a OffsetSet, &'a OffsetSet)>, aggregation: Aggregation) -> Result<f64> {
    let evals: Vec<PostEval> = posts.map(|(p, g)| post_f1(p, g)).collect();
    if evals.is_empty() {
        return Err(Error::Invalid("cannot compute corpus F1 of an empty corpus".into()));
    }
    Ok(match aggregation {
        Aggregation::Macro => evals.iter().map(|e| e.f1).sum::<f64>() / evals.len() as f64,
        Aggregation::Micro => {
            let inter: usize = evals.iter().map(|e| e.intersection_size).sum();
            let np: usize = evals.iter().map(|e| e.pred_size).sum();
            let ng: usize = evals.iter().map(|e| e.gold_size).sum();
            match (np, ng) {
                (0, 0) => 1.0,
                (0, _) | (_, 0) => 0.0,
                _ => 2.0 * inter as f64 / (np + ng) as f64,
            }
        }
    })
}

/// One evaluated post together with its tokenization.
#[derive(Debug, Clone)]
pub struct EvalPost {
    pub pred: OffsetSet,
    pub gold: OffsetSet,
    pub tokens: Vec<Token>,
}

impl EvalPost {
    pub fn new(text: &str, pred: OffsetSet, gold: OffsetSet, use_preprocessing: bool) -> Self {
        EvalPost {
            pred,
            gold,
            tokens: prepare(text, use_preprocessing),
        }
    }

    pub fn gold_spans(&self) -> Vec<TokenSpan> {
        offsets_to_token_spans(&self.gold, &self.tokens, OverlapPolicy::Any)
    }

    fn span_offsets(&self, span: &TokenSpan) -> OffsetSet {
        self.gold
            .range(self.tokens[span.s].orig_start..=self.tokens[span.e].orig_end)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LengthBucket {
    One,
    TwoToFour,
    FiveOrMore,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 3] = [LengthBucket::One, LengthBucket::TwoToFour, LengthBucket::FiveOrMore];

    pub fn of(len: usize) -> Self {
        match len {
            0 | 1 => LengthBucket::One,
            2..=4 => LengthBucket::TwoToFour,
            _ => LengthBucket::FiveOrMore,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            LengthBucket::One => "1",
            LengthBucket::TwoToFour => "2-4",
            LengthBucket::FiveOrMore => ">=5",
        }
    }
}

/// How posts are attributed to span-length buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketMode {
    /// A post belongs to the bucket of its longest gold span.
    #[default]
    PostLongest,
    /// A post enters every bucket it has a gold span in; gold is restricted
    /// to that bucket's spans and predictions on other buckets' gold are dropped.
    PerSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketStat {
    pub bucket: LengthBucket,
    pub posts: usize,
    pub spans: usize,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub mode: BucketMode,
    pub stats: Vec<BucketStat>,
    pub empty_gold_posts: usize,
}

impl BucketReport {
    pub fn get(&self, bucket: LengthBucket) -> &BucketStat {
        &self.stats[bucket.index()]
    }

    pub fn bucketed_posts(&self) -> usize {
        self.stats.iter().map(|s| s.posts).sum()
    }
}

pub fn bucketed_f1(posts: &[EvalPost], mode: BucketMode) -> BucketReport {
    let mut members: Vec<Vec<(OffsetSet, OffsetSet)>> = vec![Vec::new(); 3];
    let mut spans = [0usize; 3];
    let mut empty_gold_posts = 0;
    for post in posts {
        let gold_spans = post.gold_spans();
        if gold_spans.is_empty() {
            empty_gold_posts += 1;
            continue;
        }
        match mode {
            BucketMode::PostLongest => {
                let longest = gold_spans.iter().map(TokenSpan::len).max().unwrap_or(0);
                let b = LengthBucket::of(longest).index();
                spans[b] += gold_spans.len();
                members[b].push((post.pred.clone(), post.gold.clone()));
            }
            BucketMode::PerSpan => {
                for bucket in LengthBucket::ALL {
                    let (inside, outside): (Vec<&TokenSpan>, Vec<&TokenSpan>) =
                        gold_spans.iter().partition(|s| LengthBucket::of(s.len()) == bucket);
                    if inside.is_empty() {
                        continue;
                    }
                    let gold: OffsetSet = inside.iter().flat_map(|s| post.span_offsets(s)).collect();
                    let other: OffsetSet = outside.iter().flat_map(|s| post.span_offsets(s)).collect();
                    let pred = post.pred.difference(&other).copied().collect();
                    spans[bucket.index()] += inside.len();
                    members[bucket.index()].push((pred, gold));
                }
            }
        }
    }
    let stats = LengthBucket::ALL
        .iter()
        .map(|&bucket| {
            let m = &members[bucket.index()];
            BucketStat {
                bucket,
                posts: m.len(),
                spans: spans[bucket.index()],
                f1: corpus_f1(m).ok(),
            }
        })
        .collect();
    BucketReport {
        mode,
        stats,
        empty_gold_posts,
    }
}

/// Number of contiguous gold spans per length bucket, over all posts.
pub fn span_length_counts(posts: &[EvalPost]) -> [usize; 3] {
    let mut counts = [0; 3];
    for post in posts {
        for span in post.gold_spans() {
            counts[LengthBucket::of(span.len()).index()] += 1;
        }
    }
    counts
}

/// Lowercase words, one per line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    words: BTreeSet<String>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect();
        Lexicon { words }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Lexicon {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    /// A small built-in list for tests and demos.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/lexicon.txt"))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconSplit {
    pub f1_lexicon: Option<f64>,
    pub f1_other: Option<f64>,
    pub lexicon_posts: usize,
    pub other_posts: usize,
}

/// Posts whose gold is exactly one single-token span found in the lexicon,
/// versus every other post with nonempty gold.
pub fn lexicon_split_f1(posts: &[EvalPost], lexicon: &Lexicon) -> Result<LexiconSplit> {
    if lexicon.is_empty() {
        return Err(Error::Invalid("lexicon is empty".into()));
    }
    let mut group_a = Vec::new();
    let mut group_b = Vec::new();
    for post in posts {
        let spans = post.gold_spans();
        if spans.is_empty() {
            continue;
        }
        let is_lexical = spans.len() == 1 && spans[0].len() == 1 && lexicon.contains(&post.tokens[spans[0].s].surface);
        let pair = (post.pred.clone(), post.gold.clone());
        if is_lexical {
            group_a.push(pair);
        } else {
            group_b.push(pair);
        }
    }
    Ok(LexiconSplit {
        f1_lexicon: corpus_f1(&group_a).ok(),
        f1_other: corpus_f1(&group_b).ok(),
        lexicon_posts: group_a.len(),
        other_posts: group_b.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub corpus_f1: f64,
    pub posts: usize,
    pub buckets: BucketReport,
    pub span_counts: [usize; 3],
    pub lexicon: Option<LexiconSplit>,
}

impl AnalysisReport {
    pub fn build(posts: &[EvalPost], mode: BucketMode, lexicon: Option<&Lexicon>) -> Result<Self> {
        let pairs: Vec<(OffsetSet, OffsetSet)> = posts.iter().map(|p| (p.pred.clone(), p.gold.clone())).collect();
        Ok(AnalysisReport {
            corpus_f1: corpus_f1(&pairs)?,
            posts: posts.len(),
            buckets: bucketed_f1(posts, mode),
            span_counts: span_length_counts(posts),
            lexicon: lexicon.map(|l| lexicon_split_f1(posts, l)).transpose()?,
        })
    }

    /// Machine-readable form: `section,key,posts,spans,f1`.
    pub fn to_csv(&self) -> String {
        let fmt_f1 = |f: Option<f64>| f.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = String::from("section,key,posts,spans,f1\n");
        let _ = writeln!(out, "corpus,all,{},,{:.6}", self.posts, self.corpus_f1);
        for s in &self.buckets.stats {
            let _ = writeln!(out, "bucket,{},{},{},{}", s.bucket.label(), s.posts, s.spans, fmt_f1(s.f1));
        }
        let _ = writeln!(out, "bucket,empty-gold,{},0,", self.buckets.empty_gold_posts);
        for (b, c) in LengthBucket::ALL.iter().zip(self.span_counts) {
            let _ = writeln!(out, "span-count,{},,{},", b.label(), c);
        }
        if let Some(l) = &self.lexicon {
            let _ = writeln!(out, "lexicon,lexicon,{},,{}", l.lexicon_posts, fmt_f1(l.f1_lexicon));
            let _ = writeln!(out, "lexicon,other,{},,{}", l.other_posts, fmt_f1(l.f1_other));
        }
        out
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_f1 = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "corpus F1: {:.4} over {} posts", self.corpus_f1, self.posts)?;
        writeln!(f)?;
        writeln!(f, "span length ({:?})   posts   spans   F1", self.buckets.mode)?;
        for s in &self.buckets.stats {
            writeln!(f, "  {:<22} {:>6}  {:>6}   {}", s.bucket.label(), s.posts, s.spans, fmt_f1(s.f1))?;
        }
        writeln!(
            f,
            "  bucketed posts: {}   empty-gold posts (excluded): {}",
            self.buckets.bucketed_posts(),
            self.buckets.empty_gold_posts
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "gold span counts: 1 = {}, 2-4 = {}, >=5 = {}",
            self.span_counts[0], self.span_counts[1], self.span_counts[2]
        )?;
        if let Some(l) = &self.lexicon {
            writeln!(f)?;
            writeln!(f, "lexicon split        posts   F1")?;
            writeln!(f, "  single-word lexicon {:>6}   {}", l.lexicon_posts, fmt_f1(l.f1_lexicon))?;
            writeln!(f, "  others              {:>6}   {}", l.other_posts, fmt_f1(l.f1_other))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(r: impl IntoIterator<Item = usize>) -> OffsetSet {
        r.into_iter().collect()
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(post_f1(&set([]), &set([])).f1, 1.0);
        assert_eq!(post_f1(&set([1]), &set([])).f1, 0.0);
        assert_eq!(post_f1(&set([]), &set([1])).f1, 0.0);
        assert_eq!(post_f1(&set([1]), &set([2])).f1, 0.0);
    }

    #[test]
    fn identity_and_half_overlap() {
        let e = post_f1(&set(0..10), &set(0..10));
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
        let e = post_f1(&set([0, 1, 2, 3]), &set([2, 3, 4, 5]));
        assert_eq!((e.precision, e.recall, e.f1), (0.5, 0.5, 0.5));
        assert_eq!((e.intersection_size, e.pred_size, e.gold_size), (2, 4, 4));
    }

    #[test]
    fn corpus_means() {
        let perfect = vec![(set([1]), set([1])); 3];
        assert_eq!(corpus_f1(&perfect).unwrap(), 1.0);
        let mixed = vec![(set([1]), set([1])), (set([1]), set([2]))];
        assert_eq!(corpus_f1(&mixed).unwrap(), 0.5);
        assert!(corpus_f1(&[]).is_err());
        let micro = vec![(set([1, 2]), set([1, 2])), (set([3]), set([4, 5]))];
        assert!((corpus_f1_with(&micro, Aggregation::Micro).unwrap() - 4.0 / 7.0).abs() < 1e-15);
    }

    fn post(text: &str, gold: OffsetSet, pred: OffsetSet) -> EvalPost {
        EvalPost::new(text, pred, gold, true)
    }

    #[test]
    fn buckets_by_longest_span() {
        let text = "you stupid man and the very long insult here ok";
        // "stupid" = 4..9, "the very long insult here ok" = 19..46 (6 words)
        let p1 = post(text, set(4..=9), set(4..=9));
        let p2 = post(text, set((4..=9).chain(19..=46)), set(4..=9));
        let p3 = post(text, set([]), set([]));
        let report = bucketed_f1(&[p1, p2, p3], BucketMode::PostLongest);
        assert_eq!(report.get(LengthBucket::One).posts, 1);
        assert_eq!(report.get(LengthBucket::FiveOrMore).posts, 1);
        assert_eq!(report.get(LengthBucket::FiveOrMore).spans, 2);
        assert_eq!(report.get(LengthBucket::TwoToFour).posts, 0);
        assert_eq!(report.get(LengthBucket::TwoToFour).f1, None);
        assert_eq!(report.empty_gold_posts, 1);
        assert_eq!(report.bucketed_posts(), 2);
        assert_eq!(report.get(LengthBucket::One).f1, Some(1.0));
    }

    #[test]
    fn per_span_mode_restricts_gold() {
        let text = "you stupid man and the very long insult here ok";
        let p = post(text, set((4..=9).chain(19..=46)), set(4..=9));
        let report = bucketed_f1(&[p], BucketMode::PerSpan);
        assert_eq!(report.get(LengthBucket::One).f1, Some(1.0));
        assert_eq!(report.get(LengthBucket::FiveOrMore).f1, Some(0.0));
        assert_eq!(report.get(LengthBucket::One).posts + report.get(LengthBucket::FiveOrMore).posts, 2);
    }

    #[test]
    fn lexicon_split_groups() {
        let lex = Lexicon::from_words(["stupid", "idiot"]);
        let a = post("so Stupid!", set(3..=8), set(3..=8));
        let b = post("a very bad thing", set(2..=10), set([]));
        let c = post("idiot idiot", set(0..=4), set(0..=4));
        let split = lexicon_split_f1(&[a.clone(), b, c], &lex).unwrap();
        assert_eq!(split.lexicon_posts, 2);
        assert_eq!(split.other_posts, 1);
        assert_eq!(split.f1_lexicon, Some(1.0));
        assert_eq!(split.f1_other, Some(0.0));
        assert!(lexicon_split_f1(&[a], &Lexicon::default()).is_err());
    }

    #[test]
    fn lexicon_file_parsing() {
        let lex = Lexicon::parse("# header\nStupid\n\nidiot  # trailing\n");
        assert_eq!(lex.words().collect::<Vec<_>>(), ["idiot", "stupid"]);
        assert!(Lexicon::builtin().contains("idiot"));
    }

    #[test]
    fn report_renders() {
        let p = post("you idiot", set(4..=8), set(4..=8));
        let r = AnalysisReport::build(&[p], BucketMode::PostLongest, Some(&Lexicon::builtin())).unwrap();
        assert!(r.to_csv().contains("bucket,1,1,1,1.000000"));
        assert!(r.to_string().contains("corpus F1: 1.0000"));
    }

    fn bitset_f1(pred: &OffsetSet, gold: &OffsetSet, width: usize) -> f64 {
        let mut bp = vec![false; width];
        let mut bg = vec![false; width];
        pred.iter().for_each(|&i| bp[i] = true);
        gold.iter().for_each(|&i| bg[i] = true);
        let tp = (0..width).filter(|&i| bp[i] && bg[i]).count() as f64;
        let np = bp.iter().filter(|&&b| b).count() as f64;
        let ng = bg.iter().filter(|&&b| b).count() as f64;
        if np == 0.0 && ng == 0.0 {
            return 1.0;
        }
        if np == 0.0 || ng == 0.0 || tp == 0.0 {
            return 0.0;
        }
        let (p, r) = (tp / np, tp / ng);
        2.0 * p * r / (p + r)
    }

    proptest! {
        #[test]
        fn matches_bitset_and_is_symmetric(a in proptest::collection::btree_set(0usize..40, 0..20),
                                           b in proptest::collection::btree_set(0usize..40, 0..20)) {
            let e = post_f1(&a, &b);
            prop_assert_eq!(e.f1, bitset_f1(&a, &b, 40));
            prop_assert_eq!(e.f1, post_f1(&b, &a).f1);
            for v in [e.precision, e.recall, e.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn recall_and_precision_monotone(a in proptest::collection::btree_set(0usize..30, 1..15),
                                         g in proptest::collection::btree_set(0usize..30, 1..15),
                                         extra in 0usize..60) {
            let base = post_f1(&a, &g);
            let mut bigger = a.clone();
            bigger.insert(extra);
            let after = post_f1(&bigger, &g);
            if g.contains(&extra) {
                prop_assert!(after.recall >= base.recall);
            } else {
                prop_assert!(after.precision <= base.precision);
            }
        }
    }
}
