//! Toxic span detection: offset-preserving text preparation, a BiLSTM-CRF
//! tagger, a biaffine span extractor, character-offset F1 and its analyses.

pub mod biaffine_model;
pub mod config;
pub mod crf;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod neural;
pub mod span_codec;
pub mod tagger;
pub mod text_prep;
pub mod training;

pub use biaffine_model::{decode, train_biaffine, BiaffineConfig, BiaffineModel, BiaffineSchedule, RankedSpan, SpanScoreTensor};
pub use config::{Architecture, Overrides, RunConfig};
pub use crf::{CrfParams, EmissionMatrix};
pub use error::{Error, ErrorClass, Result};
pub use eval::{
    bucketed_f1, corpus_f1, post_f1, AnalysisReport, BucketMode, EvalPost, LengthBucket, Lexicon, OffsetSet, PostEval,
};
pub use model::Model;
pub use neural::{ModelParams, Tensor};
pub use span_codec::{OverlapPolicy, Tag, TagScheme, TagSequence, TokenSpan};
pub use tagger::{train, TaggerConfig, TaggerModel, TrainOutcome, TrainSchedule};
pub use text_prep::{prepare, RawPost, Token};
pub use training::{EpochLog, TrainStatus};
