//! A small reverse-mode tape over vectors.
//!
//! Nodes are appended in evaluation order; [`Graph::backward`] walks them in
//! reverse and writes parameter gradients into a [`Gradients`] buffer. Ops
//! read parameters straight from the borrowed [`ModelParams`], so a frozen
//! model can drive many graphs concurrently.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::neural::tensor::{matvec_acc, matvec_t_acc, outer_acc};
use crate::neural::{Gradients, ModelParams, ParamId, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameter handles of one LSTM direction. Gate order inside the `4h`
/// blocks is input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

enum Op {
    Input,
    Embed {
        table: ParamId,
        row: usize,
    },
    Linear {
        w: ParamId,
        b: Option<ParamId>,
        x: NodeId,
    },
    Add(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Activation {
        x: NodeId,
        act: Activation,
    },
    Mask {
        x: NodeId,
        mask: Vec<f64>,
    },
    /// Output is `[h; c]`. `gates` holds the post-activation i, f, g, o.
    LstmCell {
        x: NodeId,
        prev: Option<NodeId>,
        weights: LstmWeights,
        gates: Vec<f64>,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn embed(&mut self, table: ParamId, row: usize) -> NodeId {
        let value = self.params.get(table).row(row).to_vec();
        self.push(value, Op::Embed { table, row })
    }

    /// `w · x + b` with `w` shaped `[out, in]`.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: NodeId) -> NodeId {
        let wt = self.params.get(w);
        let mut out = match b {
            Some(b) => self.params.get(b).data().to_vec(),
            None => vec![0.0; wt.shape()[0]],
        };
        matvec_acc(wt.data(), &self.nodes[x.0].value, &mut out);
        self.push(out, Op::Linear { w, b, x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { x, start })
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> NodeId {
        if act == Activation::Identity {
            return x;
        }
        let value = self.nodes[x.0].value.iter().map(|&v| act.apply(v)).collect();
        self.push(value, Op::Activation { x, act })
    }

    /// Inverted dropout. A no-op without an rng or with `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: Option<&mut Rng>) -> NodeId {
        let Some(rng) = rng else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value = self.nodes[x.0].value.iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(value, Op::Mask { x, mask })
    }

    /// One LSTM step. `prev` is an earlier cell output `[h; c]`, or `None` for zero state.
    pub fn lstm_cell(&mut self, x: NodeId, prev: Option<NodeId>, weights: LstmWeights) -> NodeId {
        let h = weights.hidden;
        let mut z = self.params.get(weights.bias).data().to_vec();
        matvec_acc(self.params.get(weights.w_ih).data(), &self.nodes[x.0].value, &mut z);
        if let Some(p) = prev {
            matvec_acc(self.params.get(weights.w_hh).data(), &self.nodes[p.0].value[..h], &mut z);
        }
        let mut gates = vec![0.0; 4 * h];
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c_prev = prev.map_or(0.0, |p| self.nodes[p.0].value[h + k]);
            let c = f * c_prev + i * g;
            out[k] = o * c.tanh();
            out[h + k] = c;
            gates[k] = i;
            gates[h + k] = f;
            gates[2 * h + k] = g;
            gates[3 * h + k] = o;
        }
        self.push(
            out,
            Op::LstmCell {
                x,
                prev,
                weights,
                gates,
            },
        )
    }

    /// Backpropagates the seeded output gradients, accumulating into `grads`.
    pub fn backward(&self, seeds: &[(NodeId, &[f64])], grads: &mut Gradients) {
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        for (id, g) in seeds {
            accumulate(&mut adj[id.0], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            if adj[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Embed { table, row } => {
                    let t = grads.get_mut(*table);
                    t.row_mut(*row).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Linear { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    outer_acc(grads.get_mut(*w).data_mut(), &g, xv);
                    if let Some(b) = b {
                        grads.get_mut(*b).data_mut().iter_mut().zip(&g).for_each(|(a, v)| *a += v);
                    }
                    let dx = ensure(&mut adj[x.0], xv.len());
                    matvec_t_acc(self.params.get(*w).data(), &g, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate(&mut adj[b.0], &g);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        accumulate(&mut adj[p.0], &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.nodes[x.0].value.len();
                    let dx = ensure(&mut adj[x.0], len);
                    dx[*start..*start + g.len()].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Activation { x, act } => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, &y)| gi * act.derivative_from_output(y))
                        .collect();
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Mask { x, mask } => {
                    let d: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    accumulate(&mut adj[x.0], &d);
                }
                Op::LstmCell {
                    x,
                    prev,
                    weights,
                    gates,
                } => {
                    let h = weights.hidden;
                    let mut dz = vec![0.0; 4 * h];
                    let mut dc_prev = vec![0.0; h];
                    for k in 0..h {
                        let (i, f, cg, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                        let c = node.value[h + k];
                        let tc = c.tanh();
                        let dh = g[k];
                        let dc = g[h + k] + dh * o * (1.0 - tc * tc);
                        let c_prev = prev.map_or(0.0, |p| self.nodes[p.0].value[h + k]);
                        dz[k] = dc * cg * i * (1.0 - i);
                        dz[h + k] = dc * c_prev * f * (1.0 - f);
                        dz[2 * h + k] = dc * i * (1.0 - cg * cg);
                        dz[3 * h + k] = dh * tc * o * (1.0 - o);
                        dc_prev[k] = dc * f;
                    }
                    let xv = &self.nodes[x.0].value;
                    outer_acc(grads.get_mut(weights.w_ih).data_mut(), &dz, xv);
                    grads
                        .get_mut(weights.bias)
                        .data_mut()
                        .iter_mut()
                        .zip(&dz)
                        .for_each(|(a, v)| *a += v);
                    let dx = ensure(&mut adj[x.0], xv.len());
                    matvec_t_acc(self.params.get(weights.w_ih).data(), &dz, dx);
                    if let Some(p) = prev {
                        let h_prev = &self.nodes[p.0].value[..h];
                        outer_acc(grads.get_mut(weights.w_hh).data_mut(), &dz, h_prev);
                        let dp = ensure(&mut adj[p.0], 2 * h);
                        matvec_t_acc(self.params.get(weights.w_hh).data(), &dz, &mut dp[..h]);
                        dp[h..].iter_mut().zip(&dc_prev).for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }
}

fn ensure(slot: &mut Vec<f64>, len: usize) -> &mut [f64] {
    if slot.is_empty() {
        slot.resize(len, 0.0);
    }
    slot
}

fn accumulate(slot: &mut Vec<f64>, g: &[f64]) {
    if slot.is_empty() {
        slot.extend_from_slice(g);
    } else {
        slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}
