//! Token representations shared by both architectures: a word lookup table
//! and a character BiLSTM per token, concatenated and optionally run through
//! stacked sentence-level BiLSTMs.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::neural::{char_word_embedding, BiLstm, CharEncoder, Embedding, Graph, ModelParams, NodeId, Rng, UNK_ID};
use crate::text_prep::Token;

/// Word and character inventories. Id 0 is UNK in both; the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabLists", into = "VocabLists")]
pub struct Vocab {
    words: Vec<String>,
    chars: Vec<char>,
    word_index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabLists {
    words: Vec<String>,
    chars: Vec<String>,
}

impl From<VocabLists> for Vocab {
    fn from(v: VocabLists) -> Self {
        Vocab::from_lists(v.words, v.chars.iter().filter_map(|s| s.chars().next()).collect())
    }
}

impl From<Vocab> for VocabLists {
    fn from(v: Vocab) -> Self {
        VocabLists {
            words: v.words,
            chars: v.chars.iter().map(|c| c.to_string()).collect(),
        }
    }
}

impl Vocab {
    /// Every distinct surface and character seen (minimum frequency 1).
    pub fn build<'a, I>(surfaces: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut words = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for s in surfaces {
            words.insert(s.to_string());
            chars.extend(s.chars());
        }
        Self::from_lists(words.into_iter().collect(), chars.into_iter().collect())
    }

    /// `words`/`chars` exclude the UNK entry.
    pub fn from_lists(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        Vocab {
            words,
            chars,
            word_index,
            char_index,
        }
    }

    /// Table rows including UNK.
    pub fn num_words(&self) -> usize {
        self.words.len() + 1
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn encode(&self, tokens: &[Token]) -> EncodedSentence {
        EncodedSentence {
            word_ids: tokens.iter().map(|t| self.word_id(&t.surface)).collect(),
            char_ids: tokens
                .iter()
                .map(|t| t.surface.chars().map(|c| self.char_id(c)).collect())
                .collect(),
        }
    }
}

/// Vocabulary ids of one token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderDims {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub lstm_hidden: usize,
    /// Zero disables the sentence BiLSTM.
    pub lstm_layers: usize,
    pub embed_dropout: f64,
    pub lstm_dropout: f64,
}

#[derive(Debug, Clone)]
pub struct TokenEncoder {
    dims: EncoderDims,
    word: Embedding,
    chars: CharEncoder,
    layers: Vec<BiLstm>,
}

impl TokenEncoder {
    pub fn register(params: &mut ModelParams, vocab: &Vocab, dims: EncoderDims, rng: &mut Rng) -> Self {
        let word = Embedding::register(params, "word.embed", vocab.num_words(), dims.word_dim, rng);
        let chars = CharEncoder::register(params, "char", vocab.num_chars(), dims.char_dim, dims.char_hidden, rng);
        let mut input = dims.word_dim + chars.output_dim();
        let mut layers = Vec::with_capacity(dims.lstm_layers);
        for l in 0..dims.lstm_layers {
            let layer = BiLstm::register(params, &format!("lstm.l{l}"), input, dims.lstm_hidden, rng);
            input = layer.output_dim();
            layers.push(layer);
        }
        TokenEncoder {
            dims,
            word,
            chars,
            layers,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(l) => l.output_dim(),
            None => self.dims.word_dim + self.chars.output_dim(),
        }
    }

    /// One representation node per token. Dropout is active only when `rng` is given.
    pub fn encode(&self, g: &mut Graph<'_>, sentence: &EncodedSentence, mut rng: Option<&mut Rng>) -> Vec<NodeId> {
        let mut xs: Vec<NodeId> = sentence
            .word_ids
            .iter()
            .zip(&sentence.char_ids)
            .map(|(&w, chars)| {
                let we = self.word.lookup(g, w);
                let ce = char_word_embedding(g, chars, &self.chars);
                let joined = g.concat(&[we, ce]);
                g.dropout(joined, self.dims.embed_dropout, rng.as_deref_mut())
            })
            .collect();
        for layer in &self.layers {
            xs = layer
                .forward(g, &xs)
                .into_iter()
                .map(|h| g.dropout(h, self.dims.lstm_dropout, rng.as_deref_mut()))
                .collect();
        }
        xs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::rng_from_seed;
    use crate::text_prep::prepare;

    #[test]
    fn vocab_reserves_unk() {
        let v = Vocab::build(["b", "a", "b"]);
        assert_eq!(v.num_words(), 3);
        assert_eq!(v.word_id("a"), 1);
        assert_eq!(v.word_id("b"), 2);
        assert_eq!(v.word_id("zzz"), UNK_ID);
        assert_eq!(v.char_id('q'), UNK_ID);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn encoder_output_shapes() {
        let toks = prepare("you are an idiot", true);
        let vocab = Vocab::build(toks.iter().map(|t| t.surface.as_str()));
        let dims = EncoderDims {
            word_dim: 4,
            char_dim: 3,
            char_hidden: 2,
            lstm_hidden: 5,
            lstm_layers: 2,
            embed_dropout: 0.5,
            lstm_dropout: 0.5,
        };
        let mut params = ModelParams::new();
        let enc = TokenEncoder::register(&mut params, &vocab, dims, &mut rng_from_seed(0));
        assert_eq!(enc.output_dim(), 10);
        let sentence = vocab.encode(&toks);
        let mut g = Graph::new(&params);
        let out = enc.encode(&mut g, &sentence, None);
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|&n| g.value(n).len() == 10));
    }
}
