//! File formats and corpus generation.

pub mod checkpoint;
pub mod synth;
pub mod tsd;

pub use checkpoint::{Checkpoint, ParamRecord, FORMAT_VERSION};
pub use synth::{gen_synthetic, SynthConfig, SynthMode, DEFAULT_SPAN_MIX};
pub use tsd::{
    format_span_literal, parse_span_literal, read_tsd, read_tsd_csv, write_predictions, write_tsd, write_tsd_csv, ReadMode,
    SkippedRecord, TsdData,
};
