//! A trained model of either architecture, with checkpoint persistence.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use crate::biaffine_model::{BiaffineConfig, BiaffineModel};
use crate::config::Architecture;
use crate::dataio::Checkpoint;
use crate::error::{Error, Result};
use crate::neural::ModelParams;
use crate::tagger::{TaggerConfig, TaggerModel};

#[derive(Debug, Clone)]
pub enum Model {
    Tagger(TaggerModel),
    Biaffine(BiaffineModel),
}

impl Model {
    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Tagger(_) => Architecture::Tagger,
            Model::Biaffine(_) => Architecture::Biaffine,
        }
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            Model::Tagger(m) => &m.params,
            Model::Biaffine(m) => &m.params,
        }
    }

    pub fn predict_post(&self, text: &str) -> BTreeSet<usize> {
        match self {
            Model::Tagger(m) => m.predict_post(text),
            Model::Biaffine(m) => m.predict_post(text),
        }
    }

    /// Predictions in input order; posts are processed in parallel.
    pub fn predict_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<BTreeSet<usize>> {
        texts.par_iter().map(|t| self.predict_post(t.as_ref())).collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let arch = self.architecture().to_string();
        match self {
            Model::Tagger(m) => Checkpoint::new(&arch, &m.config, &m.vocab, &m.params),
            Model::Biaffine(m) => Checkpoint::new(&arch, &m.config, &m.vocab, &m.params),
        }
    }

    /// Rebuilds the model from its stored config and vocabulary, then
    /// restores every parameter.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: Architecture = ck
            .architecture
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown architecture `{}`", ck.architecture)))?;
        let mut model = match arch {
            Architecture::Tagger => Model::Tagger(TaggerModel::new(ck.config::<TaggerConfig>()?, ck.vocab.clone())?),
            Architecture::Biaffine => Model::Biaffine(BiaffineModel::new(ck.config::<BiaffineConfig>()?, ck.vocab.clone())?),
        };
        let params = match &mut model {
            Model::Tagger(m) => &mut m.params,
            Model::Biaffine(m) => &mut m.params,
        };
        ck.restore_into(params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::build_vocab;
    use crate::text_prep::RawPost;

    #[test]
    fn save_load_save_is_byte_identical() {
        let posts = vec![RawPost::new("you idiot!", 4..=8).unwrap()];
        let config = TaggerConfig {
            word_dim: 3,
            char_dim: 2,
            char_hidden: 2,
            lstm_hidden: 2,
            ..Default::default()
        };
        let model = Model::Tagger(TaggerModel::new(config, build_vocab(&posts, true)).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        model.save(&a).unwrap();
        let loaded = Model::load(&a).unwrap();
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.predict_post("you idiot!"), model.predict_post("you idiot!"));
    }

    #[test]
    fn config_mismatch_rejected() {
        let posts = vec![RawPost::new("a b", []).unwrap()];
        let small = TaggerConfig {
            word_dim: 3,
            char_dim: 2,
            char_hidden: 2,
            lstm_hidden: 2,
            ..Default::default()
        };
        let model = Model::Tagger(TaggerModel::new(small, build_vocab(&posts, true)).unwrap());
        let mut ck = model.to_checkpoint().unwrap();
        ck.config["word_dim"] = serde_json::json!(4);
        let err = Model::from_checkpoint(&ck).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
    }
}
