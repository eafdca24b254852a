//! Span extraction by scoring every (start, end) pair with a biaffine
//! classifier and greedily keeping the best non-clashing spans.

use std::collections::BTreeSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedSentence, EncoderDims, TokenEncoder, Vocab};
use crate::error::{Error, Result};
use crate::eval::corpus_f1;
use crate::neural::{
    left_products, log_sum_exp, rng_from_seed, Activation, Ffnn, Gradients, Graph, ModelParams, NodeId, Optimizer, OptimizerKind,
    ParamId, Rng, Tensor,
};
use crate::span_codec::{offsets_to_token_spans, token_spans_to_offsets, OverlapPolicy, TokenSpan};
use crate::tagger::{argmax, build_vocab, TrainOutcome};
use crate::text_prep::{prepare, RawPost, Token};
use crate::training::{batch_gradients, EpochLog, TrainStatus};

/// Category index of "not a span".
pub const NON_ENTITY: usize = 0;
/// Category index of a toxic span.
pub const TOXIC: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiaffineConfig {
    pub use_preprocessing: bool,
    pub include_gaps: bool,
    /// Category count including non-entity.
    pub categories: usize,
    /// Longest enumerated span in tokens; 0 means unbounded.
    pub max_width: usize,
    /// Negatives kept per gold span during training; 0 keeps every negative.
    pub neg_ratio: f64,
    pub word_dim: usize,
    pub char_dim: usize,
    #[serde(rename = "Char BiLSTM Hidden Size")]
    pub char_hidden: usize,
    #[serde(rename = "BiLSTM size")]
    pub lstm_hidden: usize,
    #[serde(rename = "BiLSTM layer")]
    pub lstm_layers: usize,
    #[serde(rename = "BiLSTM dropout")]
    pub lstm_dropout: f64,
    #[serde(rename = "FFNN size")]
    pub ffnn_size: usize,
    #[serde(rename = "FFNN dropout")]
    pub ffnn_dropout: f64,
    #[serde(rename = "Embeddings dropout")]
    pub embed_dropout: f64,
    pub seed: u64,
}

impl Default for BiaffineConfig {
    fn default() -> Self {
        BiaffineConfig {
            use_preprocessing: true,
            include_gaps: true,
            categories: 2,
            max_width: 16,
            neg_ratio: 0.0,
            word_dim: 100,
            char_dim: 25,
            char_hidden: 25,
            lstm_hidden: 200,
            lstm_layers: 3,
            lstm_dropout: 0.4,
            ffnn_size: 150,
            ffnn_dropout: 0.2,
            embed_dropout: 0.5,
            seed: 42,
        }
    }
}

impl BiaffineConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("Char BiLSTM Hidden Size", self.char_hidden),
            ("BiLSTM size", self.lstm_hidden),
            ("FFNN size", self.ffnn_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.categories < 2 {
            return Err(Error::Config("`categories` counts non-entity and must be ≥ 2".into()));
        }
        for (name, p) in [
            ("BiLSTM dropout", self.lstm_dropout),
            ("FFNN dropout", self.ffnn_dropout),
            ("Embeddings dropout", self.embed_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("`{name}` must be in [0, 1)")));
            }
        }
        if !(self.neg_ratio >= 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::Config("`neg_ratio` must be a nonnegative number".into()));
        }
        Ok(())
    }

    fn encoder_dims(&self) -> EncoderDims {
        EncoderDims {
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: self.lstm_layers,
            embed_dropout: self.embed_dropout,
            lstm_dropout: self.lstm_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiaffineSchedule {
    #[serde(rename = "Optimiser")]
    pub optimizer: OptimizerKind,
    #[serde(rename = "Learning rate")]
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Steps between dev evaluations.
    pub eval_every: u64,
    /// Stop after this many evaluations without improvement; 0 never stops early.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for BiaffineSchedule {
    fn default() -> Self {
        BiaffineSchedule {
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            batch_size: 32,
            max_steps: 40_000,
            eval_every: 500,
            patience: 10,
            clip_norm: 5.0,
        }
    }
}

impl BiaffineSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("`Learning rate` must be positive".into()));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, max_steps and eval_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Category scores for every enumerated span of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScoreTensor {
    n: usize,
    c: usize,
    /// Ordered by start, then end.
    spans: Vec<TokenSpan>,
    scores: Vec<f64>,
}

/// Spans with `s ≤ e < n` and width at most `max_width` (0 = unbounded), by start then end.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<TokenSpan> {
    let width = if max_width == 0 { n } else { max_width };
    (0..n)
        .flat_map(|s| (s..n.min(s + width)).map(move |e| TokenSpan::new(s, e)))
        .collect()
}

impl SpanScoreTensor {
    pub fn new(n: usize, c: usize, spans: Vec<TokenSpan>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != spans.len() * c {
            return Err(Error::Shape {
                name: "span scores".into(),
                expected: vec![spans.len(), c],
                found: vec![scores.len()],
            });
        }
        if let Some(bad) = spans.iter().find(|sp| sp.s > sp.e || sp.e >= n) {
            return Err(Error::Invalid(format!("span ({}, {}) outside a {n}-token sentence", bad.s, bad.e)));
        }
        Ok(SpanScoreTensor { n, c, spans, scores })
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn num_categories(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn spans(&self) -> &[TokenSpan] {
        &self.spans
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn scores_mut(&mut self) -> &mut [f64] {
        &mut self.scores
    }

    pub fn score(&self, index: usize) -> &[f64] {
        &self.scores[index * self.c..(index + 1) * self.c]
    }

    pub fn get(&self, span: TokenSpan) -> Option<&[f64]> {
        self.spans.binary_search(&span).ok().map(|i| self.score(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenSpan, &[f64])> {
        self.spans.iter().copied().zip(self.scores.chunks(self.c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedSpan {
    pub span: TokenSpan,
    /// Never [`NON_ENTITY`].
    pub category: usize,
    pub score: f64,
}

/// Ranks spans whose best category is not non-entity by that category's score
/// (ties: earlier start, then shorter) and keeps each one that neither
/// overlaps, contains, nor is contained in a span kept before it.
pub fn decode(sst: &SpanScoreTensor) -> Vec<RankedSpan> {
    let mut candidates: Vec<RankedSpan> = sst
        .iter()
        .filter_map(|(span, scores)| {
            let category = argmax(scores);
            (category != NON_ENTITY).then_some(RankedSpan {
                span,
                category,
                score: scores[category],
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.span.s.cmp(&b.span.s))
            .then(a.span.len().cmp(&b.span.len()))
    });
    let mut kept: Vec<RankedSpan> = Vec::new();
    for cand in candidates {
        if !kept.iter().any(|k| k.span.clashes(&cand.span)) {
            kept.push(cand);
        }
    }
    kept
}

/// Mean per-span softmax cross-entropy and its gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanLoss {
    pub loss: f64,
    /// Same layout as [`SpanScoreTensor::scores`].
    pub dscores: Vec<f64>,
    /// Gold spans wider than the enumeration limit, left out of the loss.
    pub excluded_gold: usize,
    /// Spans that contributed to the loss.
    pub spans_used: usize,
}

/// Gold spans are labeled [`TOXIC`], every other enumerated span [`NON_ENTITY`].
/// With `neg_ratio > 0` and an rng, only `ceil(neg_ratio · max(gold, 1))`
/// randomly chosen negatives enter the loss.
pub fn span_loss_and_grad(sst: &SpanScoreTensor, gold: &[TokenSpan], neg_ratio: f64, rng: Option<&mut Rng>) -> SpanLoss {
    let c = sst.c;
    let mut labels = vec![NON_ENTITY; sst.len()];
    let mut excluded_gold = 0;
    let mut n_gold = 0;
    for g in gold {
        match sst.spans.binary_search(g) {
            Ok(i) => {
                labels[i] = TOXIC;
                n_gold += 1;
            }
            Err(_) => excluded_gold += 1,
        }
    }
    if excluded_gold > 0 {
        log::warn!("{excluded_gold} gold span(s) wider than the enumeration limit left out of the loss");
    }
    let mut used = vec![true; sst.len()];
    if let (true, Some(rng)) = (neg_ratio > 0.0, rng) {
        let negatives: Vec<usize> = (0..sst.len()).filter(|&i| labels[i] == NON_ENTITY).collect();
        let keep = ((neg_ratio * n_gold.max(1) as f64).ceil() as usize).min(negatives.len());
        for &i in &negatives {
            used[i] = false;
        }
        for i in negatives.into_iter().choose_multiple(rng, keep) {
            used[i] = true;
        }
    }
    let spans_used = used.iter().filter(|&&u| u).count();
    let mut dscores = vec![0.0; sst.scores.len()];
    let mut loss = 0.0;
    if spans_used > 0 {
        let norm = 1.0 / spans_used as f64;
        for i in (0..sst.len()).filter(|&i| used[i]) {
            let row = sst.score(i);
            let lse = log_sum_exp(row);
            loss += lse - row[labels[i]];
            let d = &mut dscores[i * c..(i + 1) * c];
            for (k, (dk, &r)) in d.iter_mut().zip(row).enumerate() {
                *dk = ((r - lse).exp() - f64::from(u8::from(k == labels[i]))) * norm;
            }
        }
        loss *= norm;
    }
    SpanLoss {
        loss,
        dscores,
        excluded_gold,
        spans_used,
    }
}

/// Scores every span from per-token start/end vectors.
pub fn score_spans(hs: &[Vec<f64>], he: &[Vec<f64>], u: &[f64], w: &[f64], b: &[f64], max_width: usize) -> SpanScoreTensor {
    let n = hs.len();
    let c = b.len();
    let p = hs.first().map_or(0, Vec::len);
    let spans = enumerate_spans(n, max_width);
    // W·(hs ⊕ he) splits into a start half and an end half
    let start_lin: Vec<Vec<f64>> = hs.iter().map(|h| half_products(w, h, c, p, 0)).collect();
    let end_lin: Vec<Vec<f64>> = he.iter().map(|h| half_products(w, h, c, p, p)).collect();
    let mut scores = Vec::with_capacity(spans.len() * c);
    let mut current = usize::MAX;
    let mut left = Vec::new();
    for sp in &spans {
        if sp.s != current {
            current = sp.s;
            left = left_products(&hs[sp.s], u, c);
        }
        for k in 0..c {
            let bil: f64 = left[k * p..(k + 1) * p].iter().zip(&he[sp.e]).map(|(a, b)| a * b).sum();
            scores.push(bil + start_lin[sp.s][k] + end_lin[sp.e][k] + b[k]);
        }
    }
    SpanScoreTensor { n, c, spans, scores }
}

fn half_products(w: &[f64], h: &[f64], c: usize, p: usize, offset: usize) -> Vec<f64> {
    (0..c)
        .map(|k| w[k * 2 * p + offset..k * 2 * p + offset + p].iter().zip(h).map(|(a, b)| a * b).sum())
        .collect()
}

/// Gradients of [`score_spans`] given the score gradient, accumulated into the buffers.
pub struct SpanScoreGrads<'a> {
    pub hs: &'a mut [Vec<f64>],
    pub he: &'a mut [Vec<f64>],
    pub u: &'a mut [f64],
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
}

pub fn score_spans_backward(hs: &[Vec<f64>], he: &[Vec<f64>], u: &[f64], w: &[f64], sst: &SpanScoreTensor, dscores: &[f64], grads: SpanScoreGrads<'_>) {
    let c = sst.c;
    let p = hs.first().map_or(0, Vec::len);
    // per start: e_sum[k] = Σ_e d[s,e,k]·he[e]
    let mut e_sum = vec![0.0; c * p];
    let mut idx = 0;
    while idx < sst.len() {
        let s = sst.spans[idx].s;
        e_sum.fill(0.0);
        let left = left_products(&hs[s], u, c);
        while idx < sst.len() && sst.spans[idx].s == s {
            let e = sst.spans[idx].e;
            let d = &dscores[idx * c..(idx + 1) * c];
            for (k, &dk) in d.iter().enumerate() {
                if dk == 0.0 {
                    continue;
                }
                grads.b[k] += dk;
                let wk = &w[k * 2 * p..(k + 1) * 2 * p];
                let dwk = &mut grads.w[k * 2 * p..(k + 1) * 2 * p];
                for j in 0..p {
                    dwk[j] += dk * hs[s][j];
                    dwk[p + j] += dk * he[e][j];
                    grads.hs[s][j] += dk * wk[j];
                    grads.he[e][j] += dk * (wk[p + j] + left[k * p + j]);
                    e_sum[k * p + j] += dk * he[e][j];
                }
            }
            idx += 1;
        }
        for a in 0..p {
            let block = a * c * p;
            for k in 0..c {
                let es = &e_sum[k * p..(k + 1) * p];
                let row = &u[block + k * p..block + (k + 1) * p];
                grads.hs[s][a] += row.iter().zip(es).map(|(x, y)| x * y).sum::<f64>();
                let du = &mut grads.u[block + k * p..block + (k + 1) * p];
                let h = hs[s][a];
                if h != 0.0 {
                    du.iter_mut().zip(es).for_each(|(g, v)| *g += h * v);
                }
            }
        }
    }
}

/// A training sentence with its gold token spans.
#[derive(Debug, Clone)]
pub struct SpanExample {
    pub sentence: EncodedSentence,
    pub gold: Vec<TokenSpan>,
}

#[derive(Debug, Clone)]
pub struct BiaffineModel {
    pub config: BiaffineConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    encoder: TokenEncoder,
    ffnn_start: Ffnn,
    ffnn_end: Ffnn,
    u: ParamId,
    w: ParamId,
    b: ParamId,
}

impl BiaffineModel {
    pub fn new(config: BiaffineConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let mut params = ModelParams::new();
        let encoder = TokenEncoder::register(&mut params, &vocab, config.encoder_dims(), &mut rng);
        let d = encoder.output_dim();
        let p = config.ffnn_size;
        let c = config.categories;
        let ffnn_start = Ffnn::register(&mut params, "ffnn_start", d, p, p, Activation::Relu, &mut rng);
        let ffnn_end = Ffnn::register(&mut params, "ffnn_end", d, p, p, Activation::Relu, &mut rng);
        let limit = (6.0 / (2 * p) as f64).sqrt();
        let u = params.add("biaffine.u", Tensor::uniform(&[p, c, p], limit / p as f64, &mut rng));
        let w = params.add("biaffine.w", Tensor::xavier(c, 2 * p, &mut rng));
        let b = params.add("biaffine.b", Tensor::zeros(&[c]));
        Ok(BiaffineModel {
            config,
            vocab,
            params,
            encoder,
            ffnn_start,
            ffnn_end,
            u,
            w,
            b,
        })
    }

    pub fn tokens(&self, text: &str) -> Vec<Token> {
        prepare(text, self.config.use_preprocessing)
    }

    fn boundary_nodes(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, mut rng: Option<&mut Rng>) -> (Vec<NodeId>, Vec<NodeId>) {
        let xs = self.encoder.encode(g, sentence, rng.as_deref_mut());
        let p = self.config.ffnn_dropout;
        let hs = xs
            .iter()
            .map(|&x| self.ffnn_start.forward(g, x, p, rng.as_deref_mut()))
            .collect();
        let he = xs
            .iter()
            .map(|&x| self.ffnn_end.forward(g, x, p, rng.as_deref_mut()))
            .collect();
        (hs, he)
    }

    fn score_graph(&self, params: &ModelParams, g: &Graph<'_>, hs: &[NodeId], he: &[NodeId]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, SpanScoreTensor) {
        let hs: Vec<Vec<f64>> = hs.iter().map(|&n| g.value(n).to_vec()).collect();
        let he: Vec<Vec<f64>> = he.iter().map(|&n| g.value(n).to_vec()).collect();
        let sst = score_spans(
            &hs,
            &he,
            params.get(self.u).data(),
            params.get(self.w).data(),
            params.get(self.b).data(),
            self.config.max_width,
        );
        (hs, he, sst)
    }

    pub fn score_with(&self, params: &ModelParams, sentence: &EncodedSentence) -> Result<SpanScoreTensor> {
        if sentence.is_empty() {
            return Err(Error::Invalid("cannot score an empty token sequence".into()));
        }
        let mut g = Graph::new(params);
        let (hs, he) = self.boundary_nodes(&mut g, sentence, None);
        Ok(self.score_graph(params, &g, &hs, &he).2)
    }

    pub fn score(&self, tokens: &[Token]) -> Result<SpanScoreTensor> {
        self.score_with(&self.params, &self.vocab.encode(tokens))
    }

    pub fn loss_and_grad(&self, params: &ModelParams, example: &SpanExample, mut rng: Option<&mut Rng>) -> (f64, Gradients) {
        let mut g = Graph::new(params);
        let (hs_nodes, he_nodes) = self.boundary_nodes(&mut g, &example.sentence, rng.as_deref_mut());
        let (hs, he, sst) = self.score_graph(params, &g, &hs_nodes, &he_nodes);
        let sl = span_loss_and_grad(&sst, &example.gold, self.config.neg_ratio, rng);
        let mut grads = params.zero_gradients();
        let mut dhs = vec![vec![0.0; hs[0].len()]; hs.len()];
        let mut dhe = dhs.clone();
        let mut du = vec![0.0; params.get(self.u).len()];
        let mut dw = vec![0.0; params.get(self.w).len()];
        let mut db = vec![0.0; params.get(self.b).len()];
        score_spans_backward(
            &hs,
            &he,
            params.get(self.u).data(),
            params.get(self.w).data(),
            &sst,
            &sl.dscores,
            SpanScoreGrads {
                hs: &mut dhs,
                he: &mut dhe,
                u: &mut du,
                w: &mut dw,
                b: &mut db,
            },
        );
        for (id, d) in [(self.u, &du), (self.w, &dw), (self.b, &db)] {
            grads.get_mut(id).data_mut().iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        let seeds: Vec<(NodeId, &[f64])> = hs_nodes
            .iter()
            .zip(&dhs)
            .chain(he_nodes.iter().zip(&dhe))
            .map(|(&n, d)| (n, d.as_slice()))
            .collect();
        g.backward(&seeds, &mut grads);
        (sl.loss, grads)
    }

    pub fn loss(&self, params: &ModelParams, example: &SpanExample) -> f64 {
        let sst = self.score_with(params, &example.sentence).expect("nonempty sentence");
        span_loss_and_grad(&sst, &example.gold, 0.0, None).loss
    }

    pub fn predict_spans(&self, tokens: &[Token]) -> Result<Vec<RankedSpan>> {
        Ok(decode(&self.score(tokens)?))
    }

    pub fn predict_post(&self, text: &str) -> BTreeSet<usize> {
        let tokens = self.tokens(text);
        if tokens.is_empty() {
            return BTreeSet::new();
        }
        let mut spans: Vec<TokenSpan> = self
            .predict_spans(&tokens)
            .expect("nonempty tokens")
            .into_iter()
            .map(|r| r.span)
            .collect();
        spans.sort();
        token_spans_to_offsets(&spans, &tokens, self.config.include_gaps)
    }

    pub fn example(&self, post: &RawPost) -> Option<SpanExample> {
        let tokens = self.tokens(&post.text);
        if tokens.is_empty() {
            return None;
        }
        Some(SpanExample {
            sentence: self.vocab.encode(&tokens),
            gold: offsets_to_token_spans(&post.gold, &tokens, OverlapPolicy::Any),
        })
    }

    pub fn dev_f1(&self, dev: &[RawPost]) -> Result<f64> {
        let pairs: Vec<_> = dev.par_iter().map(|p| (self.predict_post(&p.text), p.gold.clone())).collect();
        corpus_f1(&pairs)
    }
}

/// Step-based training with periodic dev evaluation; keeps the best-dev parameters.
pub fn train_biaffine(
    train: &[RawPost],
    dev: &[RawPost],
    config: BiaffineConfig,
    schedule: &BiaffineSchedule,
) -> Result<TrainOutcome<BiaffineModel>> {
    schedule.validate()?;
    if dev.is_empty() {
        return Err(Error::Invalid("the development set is empty".into()));
    }
    let vocab = build_vocab(train, config.use_preprocessing);
    let mut model = BiaffineModel::new(config, vocab)?;
    let examples: Vec<SpanExample> = train.iter().filter_map(|p| model.example(p)).collect();
    if examples.is_empty() {
        return Err(Error::Invalid("the training set has no tokenized posts".into()));
    }

    let mut rng = rng_from_seed(model.config.seed ^ 0x5eed_b1af_f1e0_0002);
    let mut optimizer = Optimizer::new(schedule.optimizer, schedule.lr, &model.params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut best: Option<ModelParams> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut bad_evals = 0;
    let mut log = Vec::new();
    let mut status = TrainStatus::Completed;
    let mut window_loss = 0.0;
    let mut window_steps = 0u64;

    for step in 1..=schedule.max_steps {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        while batch.len() < schedule.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push((&examples[order[cursor]], rng.gen::<u64>()));
            cursor += 1;
        }
        let (loss, mut grads) = batch_gradients(&model.params, &batch, |ex, r| model.loss_and_grad(&model.params, ex, Some(r)));
        if !loss.is_finite() || !grads.is_finite() {
            status = TrainStatus::Aborted(format!("non-finite loss or gradient at step {step}"));
            break;
        }
        grads.scale(1.0 / batch.len() as f64);
        grads.clip_norm(schedule.clip_norm);
        optimizer.step(&mut model.params, &grads);
        window_loss += loss / batch.len() as f64;
        window_steps += 1;

        if step % schedule.eval_every == 0 || step == schedule.max_steps {
            if !model.params.is_finite() {
                status = TrainStatus::Aborted(format!("non-finite parameters at step {step}"));
                break;
            }
            let dev_f1 = model.dev_f1(dev)?;
            let mean_loss = window_loss / window_steps as f64;
            log.push(EpochLog {
                epoch: log.len() + 1,
                step,
                loss: mean_loss,
                dev_f1,
                lr: schedule.lr,
            });
            log::info!("step {step}: loss {mean_loss:.5} dev F1 {dev_f1:.4}");
            window_loss = 0.0;
            window_steps = 0;
            if dev_f1 > best_f1 {
                best_f1 = dev_f1;
                best = Some(model.params.clone());
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if schedule.patience > 0 && bad_evals >= schedule.patience {
                    status = TrainStatus::EarlyStopped;
                    break;
                }
            }
        }
    }
    if let Some(best) = best {
        model.params.copy_values_from(&best);
    }
    Ok(TrainOutcome {
        model,
        log,
        status,
        best_dev_f1: best_f1.max(0.0),
    })
}
