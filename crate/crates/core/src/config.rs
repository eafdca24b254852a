//! Run configuration read from TOML, one section per component.
//!
//! ```toml
//! [run]
//! architecture = "tagger"
//! seed = 7
//!
//! [data]
//! train = "train.csv"
//! dev = "dev.csv"
//!
//! [tagger]
//! "BiLSTM size" = 256
//! scheme = "bio"
//!
//! [tagger_schedule]
//! "Learning rate" = 0.01
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::biaffine_model::{BiaffineConfig, BiaffineSchedule};
use crate::error::{Error, Result};
use crate::span_codec::TagScheme;
use crate::tagger::{TaggerConfig, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Tagger,
    Biaffine,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Tagger => "tagger",
            Architecture::Biaffine => "biaffine",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tagger" => Ok(Architecture::Tagger),
            "biaffine" => Ok(Architecture::Biaffine),
            other => Err(Error::Config(format!("unknown architecture `{other}` (expected tagger or biaffine)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub architecture: Architecture,
    /// Overrides the seeds in the model sections when set.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub tagger: TaggerConfig,
    pub tagger_schedule: TrainSchedule,
    pub biaffine: BiaffineConfig,
    pub biaffine_schedule: BiaffineSchedule,
}

/// Command-line switches layered over a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overrides {
    pub architecture: Option<Architecture>,
    pub seed: Option<u64>,
    pub scheme: Option<TagScheme>,
    pub no_crf: bool,
    pub no_lstm: bool,
    pub no_preprocess: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        // data paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data.train, &mut config.data.dev].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self.run.architecture {
            Architecture::Tagger => {
                self.tagger.validate()?;
                self.tagger_schedule.validate()
            }
            Architecture::Biaffine => {
                self.biaffine.validate()?;
                self.biaffine_schedule.validate()
            }
        }
    }

    pub fn seed(&self) -> u64 {
        match self.run.architecture {
            Architecture::Tagger => self.tagger.seed,
            Architecture::Biaffine => self.biaffine.seed,
        }
    }

    /// Applies command-line switches, rejecting combinations that make no
    /// sense for the chosen architecture.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(a) = o.architecture {
            self.run.architecture = a;
        }
        if let Some(seed) = o.seed.or(self.run.seed) {
            self.run.seed = Some(seed);
            self.tagger.seed = seed;
            self.biaffine.seed = seed;
        }
        match self.run.architecture {
            Architecture::Tagger => {
                if let Some(scheme) = o.scheme {
                    self.tagger.scheme = scheme;
                }
                self.tagger.use_crf &= !o.no_crf;
                self.tagger.use_lstm &= !o.no_lstm;
                self.tagger.use_preprocessing &= !o.no_preprocess;
            }
            Architecture::Biaffine => {
                if o.no_crf {
                    return Err(Error::Config("--no-crf applies to the tagger only; the biaffine model has no CRF".into()));
                }
                if o.scheme.is_some() {
                    return Err(Error::Config("--scheme applies to the tagger only".into()));
                }
                if o.no_lstm {
                    self.biaffine.lstm_layers = 0;
                }
                self.biaffine.use_preprocessing &= !o.no_preprocess;
            }
        }
        self.validate()
    }
}
