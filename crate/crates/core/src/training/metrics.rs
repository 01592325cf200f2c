#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

use super::Task;
use crate::geo::{horizontal_error, vertical_error};

/// Evaluation summary of one task on one scene set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub task: Task,
    /// Mean horizontal error in nautical miles over predicted points.
    pub he_nm: Option<f64>,
    /// Mean vertical error in feet over predicted points.
    pub ve_ft: Option<f64>,
    pub mae_s: Option<f64>,
    pub rmse_s: Option<f64>,
    /// Loss in normalized units.
    pub mse: f64,
    pub n_samples: usize,
    /// Filled in by callers that own a clock.
    pub wall_time_s: Option<f64>,
}

/// Running sums behind a [`MetricsReport`]; merging two accumulators gives
/// the report of the union of their samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    pub task: Task,
    he_sum: f64,
    ve_sum: f64,
    points: usize,
    abs_sum: f64,
    sq_sum: f64,
    etas: usize,
    sse: f64,
    count: usize,
}

impl MetricsAccumulator {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            he_sum: 0.0,
            ve_sum: 0.0,
            points: 0,
            abs_sum: 0.0,
            sq_sum: 0.0,
            etas: 0,
            sse: 0.0,
            count: 0,
        }
    }

    /// Predicted and true `[lon, lat, alt]` in physical units.
    pub fn add_point(&mut self, pred: &[f64], truth: &[f64]) {
        self.he_sum += horizontal_error((pred[0], pred[1]), (truth[0], truth[1]));
        self.ve_sum += vertical_error(pred[2], truth[2]);
        self.points += 1;
    }

    /// Predicted and true ETA in seconds.
    pub fn add_eta(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.abs_sum += e.abs();
        self.sq_sum += e * e;
        self.etas += 1;
    }

    /// Squared error sum and element count in normalized units.
    pub fn add_loss(&mut self, sse: f64, count: usize) {
        self.sse += sse;
        self.count += count;
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.he_sum += other.he_sum;
        self.ve_sum += other.ve_sum;
        self.points += other.points;
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.etas += other.etas;
        self.sse += other.sse;
        self.count += other.count;
    }

    pub fn n_samples(&self) -> usize {
        match self.task {
            Task::Eta => self.etas,
            _ => self.points,
        }
    }

    pub fn report(&self) -> MetricsReport {
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        let traj = self.task != Task::Eta;
        MetricsReport {
            task: self.task,
            he_nm: if traj { mean(self.he_sum, self.points) } else { None },
            ve_ft: if traj { mean(self.ve_sum, self.points) } else { None },
            mae_s: if traj { None } else { mean(self.abs_sum, self.etas) },
            // max() absorbs rounding when every error has the same size
            rmse_s: if traj {
                None
            } else {
                mean(self.sq_sum, self.etas)
                    .map(|ms| ms.sqrt().max(self.abs_sum / self.etas as f64))
            },
            mse: mean(self.sse, self.count).unwrap_or(0.0),
            n_samples: self.n_samples(),
            wall_time_s: None,
        }
    }
}
