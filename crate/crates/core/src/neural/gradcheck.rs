//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;

use crate::neural::{rng_from_seed, Gradients, ModelParams, ParamId};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Maximum relative error.
    pub tolerance: f64,
    /// Absolute differences at or below this always pass.
    pub abs_tolerance: f64,
    /// Check at most this many entries per tensor (sampled), `None` for all.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            abs_tolerance: 1e-8,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Over entries whose absolute difference exceeds the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_abs_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<6} {:<32} entries={:<5} max_rel_err={:.3e} max_abs_err={:.3e} (idx {}: analytic {:.6e}, numeric {:.6e})",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.checked,
                p.max_rel_error,
                p.max_abs_error,
                p.worst_index,
                p.analytic,
                p.numeric
            )?;
        }
        write!(
            f,
            "{}: max relative error {:.3e} (tolerance {:.1e}), max absolute error {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance,
            self.max_abs_error()
        )
    }
}

/// Compares `analytic` against `(loss(θ+h) − loss(θ−h)) / 2h` entry by entry.
/// Parameters are restored after each probe.
pub fn gradient_check<F>(params: &mut ModelParams, analytic: &Gradients, mut loss_fn: F, config: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&ModelParams) -> f64,
{
    let mut rng = rng_from_seed(config.seed);
    let order: Vec<(String, ParamId)> = params.iter().map(|(n, id, _)| (n.to_string(), id)).collect();
    let mut checks = Vec::with_capacity(order.len());
    for (name, id) in order {
        let len = params.get(id).len();
        let entries: Vec<usize> = match config.max_entries_per_param {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut check = ParamCheck {
            name,
            checked: entries.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for i in entries {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + config.step;
            let up = loss_fn(params);
            params.get_mut(id).data_mut()[i] = orig - config.step;
            let down = loss_fn(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            let a = analytic.get(id).data()[i];
            let diff = (a - numeric).abs();
            let rel = if diff <= config.abs_tolerance {
                0.0
            } else if diff.is_finite() {
                diff / a.abs().max(numeric.abs())
            } else {
                f64::INFINITY
            };
            if (rel, diff) >= (check.max_rel_error, check.max_abs_error) {
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_abs_error = check.max_abs_error.max(diff);
        }
        check.passed = check.max_rel_error < config.tolerance;
        checks.push(check);
    }
    GradCheckReport {
        params: checks,
        tolerance: config.tolerance,
    }
}
