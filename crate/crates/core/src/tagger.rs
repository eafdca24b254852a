//! BiLSTM-CRF sequence tagger over word and character embeddings.
//!
//! Each token is the concatenation of a word lookup and a character-BiLSTM
//! vector, optionally passed through a sentence BiLSTM, and projected to one
//! score per tag. The head is either a linear-chain CRF or an independent
//! per-token softmax.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfParams, EmissionMatrix};
use crate::encoder::{EncodedSentence, EncoderDims, TokenEncoder, Vocab};
use crate::error::{Error, Result};
use crate::eval::corpus_f1;
use crate::neural::{rng_from_seed, softmax, Gradients, Graph, ModelParams, NodeId, Optimizer, OptimizerKind, ParamId, Rng, Tensor};
use crate::span_codec::{
    offsets_to_token_spans, tags_to_token_spans, token_spans_to_offsets, token_spans_to_tags, OverlapPolicy, Tag, TagScheme,
    TagSequence,
};
use crate::text_prep::{prepare, RawPost, Token};
use crate::training::{batch_gradients, EpochLog, PlateauSchedule, ScheduleEvent, TrainStatus};

/// Score added to transitions that produce an invalid BIO sequence when
/// `constrain_transitions` is on.
pub const FORBIDDEN_TRANSITION: f64 = -1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    pub scheme: TagScheme,
    pub use_crf: bool,
    pub use_lstm: bool,
    pub use_preprocessing: bool,
    /// Forbid `O→I` and a leading `I` under BIO.
    pub constrain_transitions: bool,
    pub include_gaps: bool,
    pub overlap_policy: OverlapPolicy,
    /// Trainable word embedding width (stands in for contextual encoder features).
    pub word_dim: usize,
    pub char_dim: usize,
    #[serde(rename = "Char BiLSTM Hidden Size")]
    pub char_hidden: usize,
    #[serde(rename = "Char BiLSTM layers")]
    pub char_layers: usize,
    #[serde(rename = "BiLSTM size")]
    pub lstm_hidden: usize,
    #[serde(rename = "BiLSTM layer")]
    pub lstm_layers: usize,
    #[serde(rename = "BiLSTM dropout")]
    pub lstm_dropout: f64,
    #[serde(rename = "Embeddings dropout")]
    pub embed_dropout: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            scheme: TagScheme::Io,
            use_crf: true,
            use_lstm: true,
            use_preprocessing: true,
            constrain_transitions: false,
            include_gaps: true,
            overlap_policy: OverlapPolicy::Any,
            word_dim: 100,
            char_dim: 25,
            char_hidden: 25,
            char_layers: 1,
            lstm_hidden: 256,
            lstm_layers: 1,
            lstm_dropout: 0.0,
            embed_dropout: 0.0,
            seed: 42,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("Char BiLSTM Hidden Size", self.char_hidden),
            ("BiLSTM size", self.lstm_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.char_layers != 1 {
            return Err(Error::Config("only one character BiLSTM layer is supported".into()));
        }
        if self.use_lstm && self.lstm_layers == 0 {
            return Err(Error::Config("`BiLSTM layer` must be ≥ 1 when the LSTM is enabled".into()));
        }
        for (name, p) in [("BiLSTM dropout", self.lstm_dropout), ("Embeddings dropout", self.embed_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("`{name}` must be in [0, 1)")));
            }
        }
        Ok(())
    }

    fn encoder_dims(&self) -> EncoderDims {
        EncoderDims {
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: if self.use_lstm { self.lstm_layers } else { 0 },
            embed_dropout: self.embed_dropout,
            lstm_dropout: self.lstm_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    #[serde(rename = "Optimiser")]
    pub optimizer: OptimizerKind,
    #[serde(rename = "Learning rate")]
    pub initial_lr: f64,
    pub min_lr: f64,
    /// Consecutive non-improving epochs before the learning rate is halved.
    pub halving_patience: usize,
    /// Consecutive non-improving epochs at `min_lr` before stopping.
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            optimizer: OptimizerKind::Sgd,
            initial_lr: 0.01,
            min_lr: 0.0001,
            halving_patience: 4,
            stop_patience: 4,
            max_epochs: 100,
            batch_size: 8,
            clip_norm: 5.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return Err(Error::Config("need 0 < min_lr ≤ Learning rate".into()));
        }
        if self.halving_patience == 0 || self.stop_patience == 0 {
            return Err(Error::Config("patience values must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct CrfHandles {
    transitions: ParamId,
    start: ParamId,
    stop: ParamId,
}

/// Forward outputs for one sentence.
#[derive(Debug, Clone)]
pub struct TaggerOutput {
    pub emissions: EmissionMatrix,
    /// Per-token tag distributions, present for the softmax head only.
    pub probabilities: Option<Vec<Vec<f64>>>,
}

/// A training sentence: vocabulary ids plus gold tag indices.
#[derive(Debug, Clone)]
pub struct TaggedExample {
    pub sentence: EncodedSentence,
    pub gold: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    encoder: TokenEncoder,
    proj_w: ParamId,
    proj_b: ParamId,
    crf: Option<CrfHandles>,
}

impl TaggerModel {
    /// Fresh parameters initialized from `config.seed`.
    pub fn new(config: TaggerConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.seed);
        let mut params = ModelParams::new();
        let encoder = TokenEncoder::register(&mut params, &vocab, config.encoder_dims(), &mut rng);
        let s = config.scheme.num_tags();
        let proj_w = params.add("proj.w", Tensor::xavier(s, encoder.output_dim(), &mut rng));
        let proj_b = params.add("proj.b", Tensor::zeros(&[s]));
        let crf = config.use_crf.then(|| CrfHandles {
            transitions: params.add("crf.transitions", Tensor::zeros(&[s, s])),
            start: params.add("crf.start", Tensor::zeros(&[s])),
            stop: params.add("crf.stop", Tensor::zeros(&[s])),
        });
        Ok(TaggerModel {
            config,
            vocab,
            params,
            encoder,
            proj_w,
            proj_b,
            crf,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.config.scheme.num_tags()
    }

    pub fn tokens(&self, text: &str) -> Vec<Token> {
        prepare(text, self.config.use_preprocessing)
    }

    fn emission_nodes(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, rng: Option<&mut Rng>) -> Vec<NodeId> {
        let reprs = self.encoder.encode(g, sentence, rng);
        reprs
            .into_iter()
            .map(|x| g.linear(self.proj_w, Some(self.proj_b), x))
            .collect()
    }

    fn crf_params(&self, params: &ModelParams) -> Option<CrfParams> {
        let h = self.crf?;
        let mut p = CrfParams {
            num_tags: self.num_tags(),
            transitions: params.get(h.transitions).data().to_vec(),
            start: params.get(h.start).data().to_vec(),
            stop: params.get(h.stop).data().to_vec(),
        };
        if self.config.constrain_transitions && self.config.scheme == TagScheme::Bio {
            let (o, i) = (TagScheme::Bio.index_of(Tag::O), TagScheme::Bio.index_of(Tag::I));
            p.transitions[o * p.num_tags + i] += FORBIDDEN_TRANSITION;
            p.start[i] += FORBIDDEN_TRANSITION;
        }
        Some(p)
    }

    /// Emission scores, and per-token probabilities for the softmax head.
    pub fn forward_with(&self, params: &ModelParams, sentence: &EncodedSentence) -> Result<TaggerOutput> {
        if sentence.is_empty() {
            return Err(Error::Invalid("cannot tag an empty token sequence".into()));
        }
        let mut g = Graph::new(params);
        let nodes = self.emission_nodes(&mut g, sentence, None);
        let rows: Vec<Vec<f64>> = nodes.iter().map(|&n| g.value(n).to_vec()).collect();
        let probabilities = (!self.config.use_crf).then(|| rows.iter().map(|r| softmax(r)).collect());
        Ok(TaggerOutput {
            emissions: EmissionMatrix::from_rows(&rows)?,
            probabilities,
        })
    }

    pub fn forward(&self, tokens: &[Token]) -> Result<TaggerOutput> {
        self.forward_with(&self.params, &self.vocab.encode(tokens))
    }

    /// Sentence loss (CRF NLL, or summed token cross-entropy) and its gradient.
    /// Dropout is applied only when `rng` is given.
    pub fn loss_and_grad(&self, params: &ModelParams, example: &TaggedExample, rng: Option<&mut Rng>) -> (f64, Gradients) {
        let mut g = Graph::new(params);
        let nodes = self.emission_nodes(&mut g, &example.sentence, rng);
        let s = self.num_tags();
        let rows: Vec<Vec<f64>> = nodes.iter().map(|&n| g.value(n).to_vec()).collect();
        let mut grads = params.zero_gradients();
        let (loss, seeds) = match self.crf_params(params) {
            Some(crf_params) => {
                let em = EmissionMatrix::from_rows(&rows).expect("nonempty sentence");
                let (loss, cg) = crf::nll_and_grad(&em, &crf_params, &example.gold);
                let h = self.crf.expect("crf head");
                add_into(grads.get_mut(h.transitions), &cg.transitions);
                add_into(grads.get_mut(h.start), &cg.start);
                add_into(grads.get_mut(h.stop), &cg.stop);
                let seeds: Vec<Vec<f64>> = cg.emissions.chunks(s).map(<[f64]>::to_vec).collect();
                (loss, seeds)
            }
            None => {
                let mut loss = 0.0;
                let mut seeds = Vec::with_capacity(rows.len());
                for (row, &gold) in rows.iter().zip(&example.gold) {
                    let mut p = softmax(row);
                    loss -= p[gold].ln();
                    p[gold] -= 1.0;
                    seeds.push(p);
                }
                (loss, seeds)
            }
        };
        let seed_refs: Vec<(NodeId, &[f64])> = nodes.iter().copied().zip(seeds.iter().map(Vec::as_slice)).collect();
        g.backward(&seed_refs, &mut grads);
        (loss, grads)
    }

    pub fn loss(&self, params: &ModelParams, example: &TaggedExample) -> f64 {
        let mut g = Graph::new(params);
        let nodes = self.emission_nodes(&mut g, &example.sentence, None);
        let rows: Vec<Vec<f64>> = nodes.iter().map(|&n| g.value(n).to_vec()).collect();
        match self.crf_params(params) {
            Some(crf_params) => {
                let em = EmissionMatrix::from_rows(&rows).expect("nonempty sentence");
                crf::nll_and_grad(&em, &crf_params, &example.gold).0
            }
            None => rows.iter().zip(&example.gold).map(|(r, &t)| -softmax(r)[t].ln()).sum(),
        }
    }

    /// Viterbi under the CRF head, per-token argmax otherwise.
    pub fn decode(&self, tokens: &[Token]) -> Result<TagSequence> {
        let out = self.forward(tokens)?;
        let indices = match self.crf_params(&self.params) {
            Some(crf_params) => crf::viterbi(&out.emissions, &crf_params).0,
            None => (0..out.emissions.len()).map(|i| argmax(out.emissions.row(i))).collect(),
        };
        Ok(TagSequence::from_indices(self.config.scheme, &indices))
    }

    /// Predicted toxic character offsets of `text`.
    pub fn predict_post(&self, text: &str) -> BTreeSet<usize> {
        let tokens = self.tokens(text);
        if tokens.is_empty() {
            return BTreeSet::new();
        }
        let tags = self.decode(&tokens).expect("nonempty tokens");
        token_spans_to_offsets(&tags_to_token_spans(&tags), &tokens, self.config.include_gaps)
    }

    /// Tokenizes a gold post into a training example; `None` when it has no tokens.
    pub fn example(&self, post: &RawPost) -> Option<TaggedExample> {
        let tokens = self.tokens(&post.text);
        if tokens.is_empty() {
            return None;
        }
        let spans = offsets_to_token_spans(&post.gold, &tokens, self.config.overlap_policy);
        let tags = token_spans_to_tags(&spans, tokens.len(), self.config.scheme).expect("projected spans are disjoint");
        Some(TaggedExample {
            sentence: self.vocab.encode(&tokens),
            gold: tags.indices(),
        })
    }

    pub fn dev_f1(&self, dev: &[RawPost]) -> Result<f64> {
        let pairs: Vec<_> = dev.par_iter().map(|p| (self.predict_post(&p.text), p.gold.clone())).collect();
        corpus_f1(&pairs)
    }
}

fn add_into(t: &mut Tensor, v: &[f64]) {
    t.data_mut().iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Vocabulary over the training tokens under the configured preprocessing.
pub fn build_vocab(posts: &[RawPost], use_preprocessing: bool) -> Vocab {
    let tokens: Vec<Token> = posts.iter().flat_map(|p| prepare(&p.text, use_preprocessing)).collect();
    Vocab::build(tokens.iter().map(|t| t.surface.as_str()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// The model with its best-dev parameters.
    pub model: M,
    pub log: Vec<EpochLog>,
    pub status: TrainStatus,
    pub best_dev_f1: f64,
}

/// Epoch-based training with dev-F1 model selection and the plateau schedule.
pub fn train(train: &[RawPost], dev: &[RawPost], config: TaggerConfig, schedule: &TrainSchedule) -> Result<TrainOutcome<TaggerModel>> {
    schedule.validate()?;
    if dev.is_empty() {
        return Err(Error::Invalid("the development set is empty".into()));
    }
    let vocab = build_vocab(train, config.use_preprocessing);
    let mut model = TaggerModel::new(config, vocab)?;
    let examples: Vec<TaggedExample> = train.iter().filter_map(|p| model.example(p)).collect();
    if examples.is_empty() {
        return Err(Error::Invalid("the training set has no tokenized posts".into()));
    }

    let mut rng = rng_from_seed(model.config.seed ^ 0x5eed_7a66_e400_0001);
    let mut optimizer = Optimizer::new(schedule.optimizer, schedule.initial_lr, &model.params);
    let mut plateau = PlateauSchedule::new(schedule.initial_lr, schedule.min_lr, schedule.halving_patience, schedule.stop_patience);
    let mut best: Option<ModelParams> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut log = Vec::new();
    let mut status = TrainStatus::Completed;
    let mut order: Vec<usize> = (0..examples.len()).collect();

    'epochs: for epoch in 1..=schedule.max_epochs {
        optimizer.lr = plateau.lr();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(&TaggedExample, u64)> = chunk.iter().map(|&i| (&examples[i], rng.gen())).collect();
            let (loss, mut grads) = batch_gradients(&model.params, &batch, |ex, r| model.loss_and_grad(&model.params, ex, Some(r)));
            if !loss.is_finite() || !grads.is_finite() {
                status = TrainStatus::Aborted(format!("non-finite loss or gradient in epoch {epoch}"));
                break 'epochs;
            }
            epoch_loss += loss;
            grads.scale(1.0 / chunk.len() as f64);
            grads.clip_norm(schedule.clip_norm);
            optimizer.step(&mut model.params, &grads);
        }
        if !model.params.is_finite() {
            status = TrainStatus::Aborted(format!("non-finite parameters after epoch {epoch}"));
            break;
        }
        let dev_f1 = model.dev_f1(dev)?;
        log.push(EpochLog {
            epoch,
            step: optimizer.steps(),
            loss: epoch_loss / examples.len() as f64,
            dev_f1,
            lr: plateau.lr(),
        });
        log::info!("epoch {epoch}: loss {:.5} dev F1 {dev_f1:.4} lr {}", epoch_loss / examples.len() as f64, plateau.lr());
        if dev_f1 > best_f1 {
            best_f1 = dev_f1;
            best = Some(model.params.clone());
        }
        if plateau.observe(dev_f1) == ScheduleEvent::Stop {
            status = TrainStatus::EarlyStopped;
            break;
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
