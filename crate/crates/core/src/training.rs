//! Pieces shared by both training loops.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::neural::{rng_from_seed, Gradients, ModelParams, Rng};

/// Halves the learning rate after `patience` consecutive epochs without a
/// dev improvement, never going below `min_lr`; once at `min_lr`, stops after
/// `stop_patience` further non-improving epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    min_lr: f64,
    patience: usize,
    stop_patience: usize,
    best: f64,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleEvent {
    Improved,
    NoImprovement,
    Halved,
    Stop,
}

impl PlateauSchedule {
    /// Improvement means strictly exceeding the best dev score so far, starting from 0.
    pub fn new(initial_lr: f64, min_lr: f64, patience: usize, stop_patience: usize) -> Self {
        PlateauSchedule {
            lr: initial_lr,
            min_lr,
            patience: patience.max(1),
            stop_patience: stop_patience.max(1),
            best: 0.0,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, score: f64) -> ScheduleEvent {
        if score > self.best {
            self.best = score;
            self.bad_epochs = 0;
            return ScheduleEvent::Improved;
        }
        self.bad_epochs += 1;
        if self.lr > self.min_lr {
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr / 2.0).max(self.min_lr);
                self.bad_epochs = 0;
                return ScheduleEvent::Halved;
            }
        } else if self.bad_epochs >= self.stop_patience {
            return ScheduleEvent::Stop;
        }
        ScheduleEvent::NoImprovement
    }
}

/// One row of the training log. For step-based training `epoch` counts evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub dev_f1: f64,
    pub lr: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,step,loss,dev_f1,lr\n");
    for row in log {
        out.push_str(&format!("{},{},{:?},{:?},{:?}\n", row.epoch, row.step, row.loss, row.dev_f1, row.lr));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainStatus {
    /// Ran to the epoch or step limit.
    Completed,
    /// The schedule asked to stop.
    EarlyStopped,
    /// Training hit a non-finite loss or gradient; the best finite parameters are kept.
    Aborted(String),
}

/// Per-example losses and gradients computed in parallel, summed in input order.
pub(crate) fn batch_gradients<T, F>(params: &ModelParams, batch: &[(&T, u64)], f: F) -> (f64, Gradients)
where
    T: Sync,
    F: Fn(&T, &mut Rng) -> (f64, Gradients) + Sync,
{
    let results: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|(item, seed)| f(item, &mut rng_from_seed(*seed)))
        .collect();
    let mut total = params.zero_gradients();
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        total.add_assign(g);
    }
    (loss, total)
}
