//! Linear-chain CRF: forward algorithm, Viterbi, forward-backward marginals
//! and the exact negative log-likelihood gradient.

use crate::error::{Error, Result};
use crate::neural::log_sum_exp;

/// Transition, start and stop scores over `num_tags` tags.
/// `transitions[from * num_tags + to]` scores `to` following `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    pub num_tags: usize,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        CrfParams {
            num_tags,
            transitions: vec![0.0; num_tags * num_tags],
            start: vec![0.0; num_tags],
            stop: vec![0.0; num_tags],
        }
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_tags + to]
    }
}

/// Unnormalized per-token tag scores, row-major `[n, num_tags]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    n: usize,
    num_tags: usize,
    scores: Vec<f64>,
}

impl EmissionMatrix {
    pub fn new(n: usize, num_tags: usize, scores: Vec<f64>) -> Result<Self> {
        if n == 0 || num_tags == 0 {
            return Err(Error::Invalid("emission matrix needs n ≥ 1 and at least one tag".into()));
        }
        if scores.len() != n * num_tags {
            return Err(Error::Invalid(format!(
                "emission matrix {n}×{num_tags} needs {} scores, got {}",
                n * num_tags,
                scores.len()
            )));
        }
        Ok(EmissionMatrix { n, num_tags, scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_tags = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_tags) {
            return Err(Error::Invalid("ragged emission rows".into()));
        }
        Self::new(rows.len(), num_tags, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn at(&self, i: usize, t: usize) -> f64 {
        self.scores[i * self.num_tags + t]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.num_tags..(i + 1) * self.num_tags]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Gradients of the NLL with respect to emissions and CRF parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

fn check_dims(em: &EmissionMatrix, crf: &CrfParams) {
    assert_eq!(em.num_tags, crf.num_tags, "emission/CRF tag count mismatch");
}

/// `alpha[i][t]`: log-sum of all prefixes ending in tag `t` at position `i`.
fn forward_table(em: &EmissionMatrix, crf: &CrfParams) -> Vec<f64> {
    let s = crf.num_tags;
    let mut alpha = vec![0.0; em.n * s];
    for t in 0..s {
        alpha[t] = crf.start[t] + em.at(0, t);
    }
    let mut buf = vec![0.0; s];
    for i in 1..em.n {
        for t in 0..s {
            for (from, b) in buf.iter_mut().enumerate() {
                *b = alpha[(i - 1) * s + from] + crf.transition(from, t);
            }
            alpha[i * s + t] = log_sum_exp(&buf) + em.at(i, t);
        }
    }
    alpha
}

/// `beta[i][t]`: log-sum of all suffixes after position `i` given tag `t` there.
fn backward_table(em: &EmissionMatrix, crf: &CrfParams) -> Vec<f64> {
    let s = crf.num_tags;
    let n = em.n;
    let mut beta = vec![0.0; n * s];
    beta[(n - 1) * s..].copy_from_slice(&crf.stop);
    let mut buf = vec![0.0; s];
    for i in (0..n - 1).rev() {
        for from in 0..s {
            for (to, b) in buf.iter_mut().enumerate() {
                *b = crf.transition(from, to) + em.at(i + 1, to) + beta[(i + 1) * s + to];
            }
            beta[i * s + from] = log_sum_exp(&buf);
        }
    }
    beta
}

fn finish(alpha: &[f64], crf: &CrfParams, n: usize) -> f64 {
    let s = crf.num_tags;
    let last: Vec<f64> = (0..s).map(|t| alpha[(n - 1) * s + t] + crf.stop[t]).collect();
    log_sum_exp(&last)
}

/// log Z: log-sum-exp of every tag path's score.
pub fn log_partition(em: &EmissionMatrix, crf: &CrfParams) -> f64 {
    check_dims(em, crf);
    finish(&forward_table(em, crf), crf, em.n)
}

pub fn path_score(em: &EmissionMatrix, crf: &CrfParams, tags: &[usize]) -> f64 {
    check_dims(em, crf);
    assert_eq!(tags.len(), em.n);
    let mut score = crf.start[tags[0]] + crf.stop[tags[em.n - 1]];
    for (i, &t) in tags.iter().enumerate() {
        score += em.at(i, t);
        if i > 0 {
            score += crf.transition(tags[i - 1], t);
        }
    }
    score
}

/// Highest-scoring path; ties go to the lower tag index.
pub fn viterbi(em: &EmissionMatrix, crf: &CrfParams) -> (Vec<usize>, f64) {
    check_dims(em, crf);
    let s = crf.num_tags;
    let n = em.n;
    let mut best: Vec<f64> = (0..s).map(|t| crf.start[t] + em.at(0, t)).collect();
    let mut back = vec![0usize; n * s];
    for i in 1..n {
        let mut next = vec![0.0; s];
        for to in 0..s {
            let mut arg = 0;
            let mut max = best[0] + crf.transition(0, to);
            for from in 1..s {
                let v = best[from] + crf.transition(from, to);
                if v > max {
                    max = v;
                    arg = from;
                }
            }
            next[to] = max + em.at(i, to);
            back[i * s + to] = arg;
        }
        best = next;
    }
    let mut last = 0;
    let mut score = best[0] + crf.stop[0];
    for t in 1..s {
        let v = best[t] + crf.stop[t];
        if v > score {
            score = v;
            last = t;
        }
    }
    let mut path = vec![last; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i * s + path[i]];
    }
    (path, score)
}

/// Per-position tag posteriors, `[n, num_tags]` row-major.
pub fn marginals(em: &EmissionMatrix, crf: &CrfParams) -> Vec<f64> {
    check_dims(em, crf);
    let alpha = forward_table(em, crf);
    let beta = backward_table(em, crf);
    let log_z = finish(&alpha, crf, em.n);
    alpha.iter().zip(&beta).map(|(a, b)| (a + b - log_z).exp()).collect()
}

/// `log Z − score(gold)` and its gradient, via forward-backward.
pub fn nll_and_grad(em: &EmissionMatrix, crf: &CrfParams, gold: &[usize]) -> (f64, CrfGradients) {
    check_dims(em, crf);
    assert_eq!(gold.len(), em.n, "gold length must equal sequence length");
    let s = crf.num_tags;
    let n = em.n;
    let alpha = forward_table(em, crf);
    let beta = backward_table(em, crf);
    let log_z = finish(&alpha, crf, n);
    let loss = log_z - path_score(em, crf, gold);

    let mut emissions: Vec<f64> = alpha.iter().zip(&beta).map(|(a, b)| (a + b - log_z).exp()).collect();
    let mut start = emissions[..s].to_vec();
    let mut stop = emissions[(n - 1) * s..].to_vec();
    let mut transitions = vec![0.0; s * s];
    for i in 0..n - 1 {
        for from in 0..s {
            for to in 0..s {
                let lp = alpha[i * s + from] + crf.transition(from, to) + em.at(i + 1, to) + beta[(i + 1) * s + to] - log_z;
                transitions[from * s + to] += lp.exp();
            }
        }
    }
    for (i, &t) in gold.iter().enumerate() {
        emissions[i * s + t] -= 1.0;
        if i > 0 {
            transitions[gold[i - 1] * s + t] -= 1.0;
        }
    }
    start[gold[0]] -= 1.0;
    stop[gold[n - 1]] -= 1.0;
    (
        loss,
        CrfGradients {
            emissions,
            transitions,
            start,
            stop,
        },
    )
}
