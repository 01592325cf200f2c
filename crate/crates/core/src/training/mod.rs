//! Pre-training, fine-tuning, data-fraction and incremental workflows.

mod engine;
mod log;
mod metrics;
mod workflows;

pub use engine::{slot_loss, Example, LossCurve, Target};
pub use log::{parse_log_line, prequential_violations, LogRecord, RunObserver};
pub use metrics::{MetricsAccumulator, MetricsReport};
pub use workflows::{
    chronological_split, data_fraction_run, evaluate, finetune, finetune_eta,
    finetune_trajectory, incremental_run, period_key, pretrain, validation_loss, IncrementalReport, PeriodResult,
    Predictor, Split, OVERFIT_BATCHES,
};

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::scene::{Normalizer, Scene};

/// Steps masked at the end of an agent for trajectory prediction.
pub const PREDICTION_HORIZON: usize = 12;

pub const PRETRAIN_LR: f64 = 1e-4;
pub const TRAJECTORY_LR: f64 = 2e-5;
pub const ETA_LR: f64 = 5e-5;
pub const FINETUNE_EPOCHS: usize = 10;
pub const SCRATCH_EPOCHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RunMode {
    Pretrain,
    Finetune,
    Scratch,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Task {
    MaskRecovery,
    Trajectory,
    Eta,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::MaskRecovery => "mask_recovery",
            Task::Trajectory => "trajectory",
            Task::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Period {
    Day,
    Week,
    Month,
}

impl Period {
    pub fn name(self) -> &'static str {
        match self {
            Period::Day => "day",
            Period::Week => "week",
            Period::Month => "month",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentPlan {
    pub mode: RunMode,
    pub task: Task,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub data_fraction: f64,
    pub update_period: Option<Period>,
    pub seed: u64,
}

/// Batch size used for the agent-aware model; the baseline sees twice as
/// many (shorter) samples per step.
pub fn default_batch_size(variant: Variant) -> usize {
    match variant {
        Variant::AgentAware => 8,
        Variant::MultiHead => 16,
    }
}

fn task_lr(task: Task) -> f64 {
    match task {
        Task::MaskRecovery => PRETRAIN_LR,
        Task::Trajectory => TRAJECTORY_LR,
        Task::Eta => ETA_LR,
    }
}

impl ExperimentPlan {
    pub fn pretrain(variant: Variant, epochs: usize, seed: u64) -> Self {
        Self {
            mode: RunMode::Pretrain,
            task: Task::MaskRecovery,
            epochs,
            lr: PRETRAIN_LR,
            batch_size: default_batch_size(variant),
            data_fraction: 1.0,
            update_period: None,
            seed,
        }
    }

    pub fn finetune(variant: Variant, task: Task, seed: u64) -> Self {
        Self {
            mode: RunMode::Finetune,
            task,
            epochs: FINETUNE_EPOCHS,
            lr: task_lr(task),
            ..Self::pretrain(variant, FINETUNE_EPOCHS, seed)
        }
    }

    pub fn scratch(variant: Variant, task: Task, seed: u64) -> Self {
        Self {
            mode: RunMode::Scratch,
            epochs: SCRATCH_EPOCHS,
            lr: PRETRAIN_LR,
            ..Self::finetune(variant, task, seed)
        }
    }

    pub fn incremental(variant: Variant, task: Task, period: Period, seed: u64) -> Self {
        Self {
            mode: RunMode::Incremental,
            update_period: Some(period),
            ..Self::finetune(variant, task, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad(format!("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return bad(format!("batch_size must be >= 1"));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!("data_fraction must be in (0, 1], got {}", self.data_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.mode == RunMode::Incremental && self.update_period.is_none() {
            return bad(format!("incremental runs need an update period"));
        }
        if self.mode == RunMode::Pretrain && self.task != Task::MaskRecovery {
            return bad(format!("pre-training only supports the mask recovery task"));
        }
        if self.mode != RunMode::Pretrain && self.task == Task::MaskRecovery {
            return bad(format!("mask recovery is the pre-training task"));
        }
        Ok(())
    }

    /// Independent random stream for one purpose of this run.
    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Mean and spread of ETA labels in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    /// Fits on labels; the spread is floored at one second.
    pub fn fit(labels: &[f64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("ETA labels"));
        }
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt().max(1.0),
        })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// A model with the data transforms it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: Model,
    pub normalizer: Normalizer,
    pub eta_scaler: Option<TargetScaler>,
}

impl ModelBundle {
    /// Fresh model with a normalizer fitted on `train`.
    pub fn new(config: ModelConfig, train: &[Scene], seed: u64) -> Result<Self> {
        Ok(Self {
            model: Model::new(config, seed)?,
            normalizer: Normalizer::fit(train)?,
            eta_scaler: None,
        })
    }

    pub fn evaluate(&self, scenes: &[Scene], task: Task) -> Result<MetricsReport> {
        evaluate(self, scenes, task)
    }
}

pub(crate) fn normalize_all(normalizer: &Normalizer, scenes: &[Scene]) -> Vec<Scene> {
    scenes.iter().map(|s| normalizer.normalize(s)).collect()
}

#[cfg(test)]
mod tests;
