use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExperimentPlan, LogRecord, RunObserver, Task, TargetScaler, PREDICTION_HORIZON};
use crate::error::{Error, Result};
use crate::model::{
    draw_final_span, draw_pretrain_mask, query_matrix, Mode, Model, MASK_SPAN,
};
use crate::nn::{mse, Adam, AdamConfig, LossValue};
use crate::scene::Scene;
use crate::tensor::Matrix;

const EVAL_SEED: u64 = 0x6d61_736b_6576_616c;

/// What the model is asked to produce for one scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Reconstruct the flagged slots (agent-major order).
    Slots(Vec<bool>),
    /// Predict normalized labels for the queried agents.
    Eta { queried: Vec<bool>, labels: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub scene: &'a Scene,
    pub target: Target,
}

impl<'a> Example<'a> {
    /// Builds the example for `task` on a normalized scene; `None` when the
    /// scene has nothing to predict for that task.
    pub fn build<R: Rng + ?Sized>(
        scene: &'a Scene,
        task: Task,
        rng: &mut R,
        scaler: Option<&TargetScaler>,
    ) -> Option<Self> {
        let view = scene.view();
        let target = match task {
            Task::MaskRecovery => {
                let span = draw_pretrain_mask(&view, MASK_SPAN, rng)?;
                Target::Slots(span.slots(scene.n_agents, scene.n_steps))
            }
            Task::Trajectory => {
                let span = draw_final_span(&view, PREDICTION_HORIZON, rng)?;
                Target::Slots(span.slots(scene.n_agents, scene.n_steps))
            }
            Task::Eta => {
                let queried: Vec<bool> = (0..scene.n_agents)
                    .map(|n| scene.valid_len[n] > 0 && scene.airborne_at_end(n))
                    .collect();
                if !queried.contains(&true) {
                    return None;
                }
                let scaler = scaler.copied().unwrap_or(TargetScaler { mean: 0.0, std: 1.0 });
                let labels = (0..scene.n_agents)
                    .map(|n| {
                        if queried[n] {
                            scaler.normalize(scene.time_to_arrival[n])
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Target::Eta { queried, labels }
            }
        };
        Some(Self { scene, target })
    }

    /// Fixed example used for validation and test, independent of call
    /// order.
    pub fn for_evaluation(scene: &'a Scene, task: Task, scaler: Option<&TargetScaler>) -> Option<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED ^ scene.window_start as u64);
        Self::build(scene, task, &mut rng, scaler)
    }

    /// Number of scalar terms in this example's loss.
    pub fn count(&self) -> usize {
        match &self.target {
            Target::Slots(m) => m.iter().filter(|&&b| b).count() * self.scene.n_features,
            Target::Eta { queried, .. } => queried.iter().filter(|&&b| b).count(),
        }
    }

    pub fn masked(&self) -> Vec<bool> {
        match &self.target {
            Target::Slots(m) => m.clone(),
            Target::Eta { .. } => vec![false; self.scene.n_agents * self.scene.n_steps],
        }
    }
}

/// Mean squared error restricted to masked slots; unmasked slots get zero
/// gradient.
pub fn slot_loss(output: &Matrix, scene: &Scene, masked: &[bool]) -> Result<LossValue> {
    let f = scene.n_features;
    let valid: Vec<bool> = masked.iter().flat_map(|&m| core::iter::repeat_n(m, f)).collect();
    mse(output.as_slice(), &scene.data, Some(&valid))
}

/// Runs one example; with `grads` set, accumulates gradients of
/// `sse / total` where `total` is the batch-wide term count. Returns the
/// sum of squared errors.
pub(crate) fn run_example(
    model: &Model,
    ex: &Example<'_>,
    mode: &mut Mode<'_>,
    grads: Option<(&mut Model, usize)>,
) -> Result<f64> {
    let view = ex.scene.view();
    let masked = ex.masked();
    let enc = model.encode(&view, &masked, mode)?;
    match &ex.target {
        Target::Slots(m) => {
            let loss = slot_loss(&enc.output, ex.scene, m)?;
            if let Some((g, total)) = grads {
                let scale = loss.count as f64 / total as f64;
                let d = Matrix::from_vec(
                    enc.output.rows(),
                    enc.output.cols(),
                    loss.grad.iter().map(|v| v * scale).collect(),
                )?;
                model.backward(&enc, Some(&d), None, g)?;
            }
            Ok(loss.value * loss.count as f64)
        }
        Target::Eta { queried, labels } => {
            let q = query_matrix(queried, 1, ex.scene.n_features);
            let dec = model.decode(&enc, &q, mode)?;
            let loss = mse(&dec.predictions(), labels, Some(queried))?;
            if let Some((g, total)) = grads {
                let scale = loss.count as f64 / total as f64;
                let dy: Vec<f64> = loss.grad.iter().map(|v| v * scale).collect();
                model.backward(&enc, None, Some((&dec, &dy)), g)?;
            }
            Ok(loss.value * loss.count as f64)
        }
    }
}

/// Per-epoch mean training loss and validation loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub val: Vec<Option<f64>>,
}

impl LossCurve {
    pub fn last_val(&self) -> Option<f64> {
        self.val.last().copied().flatten()
    }
}

/// Mean loss over the fixed evaluation examples of `scenes`.
pub(crate) fn eval_loss(
    model: &Model,
    scenes: &[Scene],
    task: Task,
    scaler: Option<&TargetScaler>,
) -> Result<Option<f64>> {
    let (mut sse, mut count) = (0.0, 0);
    for scene in scenes {
        if let Some(ex) = Example::for_evaluation(scene, task, scaler) {
            sse += run_example(model, &ex, &mut Mode::Eval, None)?;
            count += ex.count();
        }
    }
    Ok((count > 0).then(|| sse / count as f64))
}

pub(crate) struct TrainSpec<'a> {
    pub stage: String,
    pub plan: &'a ExperimentPlan,
    pub dropout: f64,
    pub scaler: Option<TargetScaler>,
    /// Separates the random streams of repeated runs under one plan.
    pub salt: u64,
}

/// Mini-batch Adam over normalized `train` scenes for `plan.epochs`
/// epochs, logging train and validation loss after each.
pub(crate) fn train_epochs(
    model: &mut Model,
    train: &[Scene],
    val: &[Scene],
    spec: &TrainSpec<'_>,
    log: &mut dyn RunObserver,
) -> Result<LossCurve> {
    let plan = spec.plan;
    let task = plan.task;
    let stream = 16 * spec.salt;
    let mut order_rng = plan.rng(stream + 1);
    let mut mask_rng = plan.rng(stream + 2);
    let mut drop_rng = plan.rng(stream + 3);
    let mut adam = Adam::new(AdamConfig::with_lr(plan.lr));
    let mut grads = model.zeros_like();
    let mut curve = LossCurve::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=plan.epochs {
        order.shuffle(&mut order_rng);
        let (mut epoch_sse, mut epoch_count) = (0.0, 0);
        for (batch_no, chunk) in order.chunks(plan.batch_size).enumerate() {
            let examples: Vec<Example<'_>> = chunk
                .iter()
                .filter_map(|&i| {
                    Example::build(&train[i], task, &mut mask_rng, spec.scaler.as_ref())
                })
                .collect();
            let total: usize = examples.iter().map(Example::count).sum();
            if total == 0 {
                continue;
            }
            grads.params_mut().into_iter().for_each(|m| m.fill(0.0));
            let mut sse = 0.0;
            for ex in &examples {
                let mut mode = if spec.dropout > 0.0 {
                    Mode::Train {
                        p: spec.dropout,
                        rng: &mut drop_rng,
                    }
                } else {
                    Mode::Eval
                };
                sse += run_example(model, ex, &mut mode, Some((&mut grads, total)))?;
            }
            if !sse.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            let g: Vec<&Matrix> = grads.params().into_iter().map(|(_, m)| m).collect();
            adam.step(&mut model.params_mut(), &g)?;
            epoch_sse += sse;
            epoch_count += total;
        }
        if epoch_count == 0 {
            return Err(Error::Empty("training examples for this task"));
        }
        let train_loss = epoch_sse / epoch_count as f64;
        let val_loss = eval_loss(model, val, task, spec.scaler.as_ref())?;
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(plan.batch_size),
            });
        }
        log.record(LogRecord::Epoch {
            stage: spec.stage.clone(),
            epoch,
            train_loss,
            val_loss,
        });
        curve.train.push(train_loss);
        curve.val.push(val_loss);
    }
    Ok(curve)
}
