//! Versioned JSON checkpoints: architecture, config, vocabulary and every
//! parameter as name, shape and row-major values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::neural::{ModelParams, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: String,
    pub config: serde_json::Value,
    pub vocab: Vocab,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(architecture: &str, config: &C, vocab: &Vocab, params: &ModelParams) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Checkpoint(format!("cannot serialize config: {e}")))?;
        let mut records = Vec::with_capacity(params.len());
        for (name, _, tensor) in params.iter() {
            if !tensor.is_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}` has non-finite values")));
            }
            records.push(ParamRecord {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                values: tensor.data().to_vec(),
            });
        }
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            architecture: architecture.to_string(),
            config,
            vocab: vocab.clone(),
            params: records,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint values are finite");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported format version {v} (expected {FORMAT_VERSION})"))),
            None => return Err(Error::Checkpoint("missing `format_version`".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn config<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("config does not match `{}`: {e}", self.architecture)))
    }

    /// Overwrites `params` with the stored values. Every parameter must be
    /// present with a matching shape, and nothing extra may be stored.
    pub fn restore_into(&self, params: &mut ModelParams) -> Result<()> {
        if self.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, the model expects {}",
                self.params.len(),
                params.len()
            )));
        }
        for rec in &self.params {
            if params.id(&rec.name).is_none() {
                return Err(Error::Checkpoint(format!("unknown parameter `{}`", rec.name)));
            }
            let tensor = Tensor::from_vec(rec.shape.clone(), rec.values.clone()).map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", rec.name)))?;
            params.set(&rec.name, tensor)?;
        }
        Ok(())
    }
}
