use crate::neural::graph::{Activation, Graph, LstmWeights, NodeId};
use crate::neural::{ModelParams, ParamId, Rng, Tensor};

/// Rows of a lookup table; row 0 is reserved for unknown items.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

pub const UNK_ID: usize = 0;

impl Embedding {
    pub fn register(params: &mut ModelParams, name: &str, rows: usize, dim: usize, rng: &mut Rng) -> Self {
        let table = params.add(name, Tensor::uniform(&[rows, dim], 0.1, rng));
        Embedding { table, dim }
    }

    pub fn lookup(&self, g: &mut Graph<'_>, id: usize) -> NodeId {
        embed_lookup(g, self.table, id)
    }
}

/// Looks up `token_id`, falling back to the UNK row for ids past the table.
pub fn embed_lookup(g: &mut Graph<'_>, table: ParamId, token_id: usize) -> NodeId {
    let rows = g.params().get(table).shape()[0];
    g.embed(table, if token_id < rows { token_id } else { UNK_ID })
}

fn register_lstm(params: &mut ModelParams, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> LstmWeights {
    let w_ih = params.add(format!("{prefix}.w_ih"), Tensor::xavier(4 * hidden, input, rng));
    let w_hh = params.add(format!("{prefix}.w_hh"), Tensor::xavier(4 * hidden, hidden, rng));
    let mut b = Tensor::zeros(&[4 * hidden]);
    b.data_mut()[hidden..2 * hidden].fill(1.0);
    let bias = params.add(format!("{prefix}.bias"), b);
    LstmWeights {
        w_ih,
        w_hh,
        bias,
        hidden,
    }
}

/// Runs one direction; returns the `[h; c]` node per position, in input order.
fn run_direction(g: &mut Graph<'_>, weights: LstmWeights, inputs: &[NodeId], reverse: bool) -> Vec<NodeId> {
    let mut states = vec![None; inputs.len()];
    let mut prev = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for i in order {
        let cell = g.lstm_cell(inputs[i], prev, weights);
        states[i] = Some(cell);
        prev = Some(cell);
    }
    states.into_iter().map(|s| s.expect("every position visited")).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub forward: LstmWeights,
    pub backward: LstmWeights,
}

impl BiLstm {
    pub fn register(params: &mut ModelParams, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstm {
            forward: register_lstm(params, &format!("{prefix}.fw"), input, hidden, rng),
            backward: register_lstm(params, &format!("{prefix}.bw"), input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn forward(&self, g: &mut Graph<'_>, inputs: &[NodeId]) -> Vec<NodeId> {
        bilstm_forward(g, inputs, self)
    }
}

/// Per-position concatenation of the left-to-right and right-to-left hidden states.
pub fn bilstm_forward(g: &mut Graph<'_>, inputs: &[NodeId], lstm: &BiLstm) -> Vec<NodeId> {
    let h = lstm.hidden();
    let fw = run_direction(g, lstm.forward, inputs, false);
    let bw = run_direction(g, lstm.backward, inputs, true);
    fw.into_iter()
        .zip(bw)
        .map(|(f, b)| {
            let hf = g.slice(f, 0, h);
            let hb = g.slice(b, 0, h);
            g.concat(&[hf, hb])
        })
        .collect()
}

/// Character lookup followed by a character BiLSTM; the word vector is the
/// final forward state joined with the final backward state.
#[derive(Debug, Clone, Copy)]
pub struct CharEncoder {
    pub embedding: Embedding,
    pub lstm: BiLstm,
}

impl CharEncoder {
    pub fn register(params: &mut ModelParams, prefix: &str, n_chars: usize, char_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        CharEncoder {
            embedding: Embedding::register(params, &format!("{prefix}.embed"), n_chars, char_dim, rng),
            lstm: BiLstm::register(params, &format!("{prefix}.lstm"), char_dim, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.output_dim()
    }
}

pub fn char_word_embedding(g: &mut Graph<'_>, char_ids: &[usize], enc: &CharEncoder) -> NodeId {
    assert!(!char_ids.is_empty(), "char_word_embedding needs a nonempty word");
    let h = enc.lstm.hidden();
    let inputs: Vec<NodeId> = char_ids.iter().map(|&c| enc.embedding.lookup(g, c)).collect();
    let fw = run_direction(g, enc.lstm.forward, &inputs, false);
    let bw = run_direction(g, enc.lstm.backward, &inputs, true);
    let last_fw = g.slice(*fw.last().expect("nonempty"), 0, h);
    let last_bw = g.slice(bw[0], 0, h);
    g.concat(&[last_fw, last_bw])
}

/// One hidden layer with an activation, then a linear output layer.
#[derive(Debug, Clone, Copy)]
pub struct Ffnn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub activation: Activation,
}

impl Ffnn {
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        Ffnn {
            w1: params.add(format!("{prefix}.w1"), Tensor::xavier(hidden, input, rng)),
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: params.add(format!("{prefix}.w2"), Tensor::xavier(output, hidden, rng)),
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(&[output])),
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId, dropout: f64, rng: Option<&mut Rng>) -> NodeId {
        ffnn_forward(g, x, self, dropout, rng)
    }
}

pub fn ffnn_forward(g: &mut Graph<'_>, x: NodeId, ffnn: &Ffnn, dropout: f64, rng: Option<&mut Rng>) -> NodeId {
    let pre = g.linear(ffnn.w1, Some(ffnn.b1), x);
    let hidden = g.activation(pre, ffnn.activation);
    let hidden = g.dropout(hidden, dropout, rng);
    g.linear(ffnn.w2, Some(ffnn.b2), hidden)
}
