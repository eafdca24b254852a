//! Dense numeric core: tensors, a reverse-mode tape, recurrent and
//! feed-forward layers, the biaffine form, and a gradient checker.

pub mod biaffine;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
mod params;
mod tensor;

use rand::SeedableRng;

pub use biaffine::{biaffine_form, biaffine_form_backward, left_products, BiaffineGrads};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, Activation, Graph, LstmWeights, NodeId};
pub use layers::{bilstm_forward, char_word_embedding, embed_lookup, ffnn_forward, BiLstm, CharEncoder, Embedding, Ffnn, UNK_ID};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, ModelParams, ParamId};
pub use tensor::Tensor;

/// The crate-wide pseudorandom generator: ChaCha with 8 rounds.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
