//! Bilinear-plus-linear scoring of a (start, end) representation pair.
//!
//! `U` is laid out `[p, c, p]`, `W` is `[c, 2p]` and `b` is `[c]`; the score
//! for category `k` is `hsᵀ·U[:,k,:]·he + W[k,:]·(hs ⊕ he) + b[k]`.

use crate::neural::tensor::dot;

/// Per-category scores for one span.
pub fn biaffine_form(hs: &[f64], he: &[f64], u: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let p = hs.len();
    let c = b.len();
    debug_assert_eq!(he.len(), p);
    debug_assert_eq!(u.len(), p * c * p);
    debug_assert_eq!(w.len(), c * 2 * p);
    let left = left_products(hs, u, c);
    (0..c)
        .map(|k| {
            let wk = &w[k * 2 * p..(k + 1) * 2 * p];
            dot(&left[k * p..(k + 1) * p], he) + dot(&wk[..p], hs) + dot(&wk[p..], he) + b[k]
        })
        .collect()
}

/// `left[k, j] = Σ_a hs[a]·U[a, k, j]`, reusable across every end position.
pub fn left_products(hs: &[f64], u: &[f64], c: usize) -> Vec<f64> {
    let p = hs.len();
    let mut left = vec![0.0; c * p];
    for (a, &h) in hs.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        let block = &u[a * c * p..(a + 1) * c * p];
        left.iter_mut().zip(block).for_each(|(l, v)| *l += h * v);
    }
    left
}

/// Gradient buffers for [`biaffine_form_backward`], all accumulated into.
pub struct BiaffineGrads<'a> {
    pub hs: &'a mut [f64],
    pub he: &'a mut [f64],
    pub u: &'a mut [f64],
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
}

pub fn biaffine_form_backward(hs: &[f64], he: &[f64], u: &[f64], w: &[f64], dout: &[f64], grads: BiaffineGrads<'_>) {
    let p = hs.len();
    let c = dout.len();
    let left = left_products(hs, u, c);
    for (k, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let wk = &w[k * 2 * p..(k + 1) * 2 * p];
        grads.b[k] += d;
        let dwk = &mut grads.w[k * 2 * p..(k + 1) * 2 * p];
        for j in 0..p {
            dwk[j] += d * hs[j];
            dwk[p + j] += d * he[j];
            grads.he[j] += d * (left[k * p + j] + wk[p + j]);
            grads.hs[j] += d * wk[j];
        }
        for a in 0..p {
            let row = &u[a * c * p + k * p..a * c * p + (k + 1) * p];
            grads.hs[a] += d * dot(row, he);
            let du = &mut grads.u[a * c * p + k * p..a * c * p + (k + 1) * p];
            let s = d * hs[a];
            du.iter_mut().zip(he).for_each(|(g, e)| *g += s * e);
        }
    }
}
