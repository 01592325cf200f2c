use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use chrono::{DateTime, Datelike};
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;
use rand::seq::index::sample;

use super::engine::{eval_loss, train_epochs, Example, LossCurve, Target, TrainSpec};
use super::{
    normalize_all, ExperimentPlan, LogRecord, MetricsAccumulator, MetricsReport, ModelBundle,
    Period, RunMode, RunObserver, Task, TargetScaler,
};
use crate::error::{Error, Result};
use crate::model::{query_matrix, Mode};
use crate::scene::{Normalizer, Scene};

/// Chronological train / validation / test blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Orders scenes by window start and cuts 80/10/10; validation and test get
/// at least one scene each.
pub fn chronological_split(scenes: &[Scene]) -> Result<Split> {
    if scenes.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 scenes to split, got {}",
            scenes.len()
        )));
    }
    let mut sorted = scenes.to_vec();
    sorted.sort_by_key(|s| s.window_start);
    let n = sorted.len();
    let held = (n / 10).max(1);
    let test = sorted.split_off(n - held);
    let val = sorted.split_off(n - 2 * held);
    Ok(Split {
        train: sorted,
        val,
        test,
    })
}

/// Anything that can answer evaluation examples in normalized units.
pub trait Predictor {
    fn normalizer(&self) -> &Normalizer;
    fn eta_scaler(&self) -> Option<&TargetScaler>;
    /// For slot targets the flattened `NT x F` reconstruction; for ETA one
    /// value per agent.
    fn predict(&self, example: &Example<'_>) -> Result<Vec<f64>>;
}

impl Predictor for ModelBundle {
    fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn eta_scaler(&self) -> Option<&TargetScaler> {
        self.eta_scaler.as_ref()
    }

    fn predict(&self, ex: &Example<'_>) -> Result<Vec<f64>> {
        let enc = self
            .model
            .encode(&ex.scene.view(), &ex.masked(), &mut Mode::Eval)?;
        match &ex.target {
            Target::Slots(_) => Ok(enc.output.into_vec()),
            Target::Eta { queried, .. } => {
                let q = query_matrix(queried, 1, ex.scene.n_features);
                Ok(self.model.decode(&enc, &q, &mut Mode::Eval)?.predictions())
            }
        }
    }
}

fn accumulate<P: Predictor + ?Sized>(
    predictor: &P,
    scenes: &[Scene],
    task: Task,
) -> Result<MetricsAccumulator> {
    let norm = predictor.normalizer();
    let scaler = predictor.eta_scaler().copied();
    if task == Task::Eta && scaler.is_none() {
        return Err(Error::Config("ETA evaluation needs a fitted target scaler".into()));
    }
    let mut acc = MetricsAccumulator::new(task);
    for raw in scenes {
        let scene = norm.normalize(raw);
        let Some(ex) = Example::for_evaluation(&scene, task, scaler.as_ref()) else {
            continue;
        };
        let pred = predictor.predict(&ex)?;
        let f = scene.n_features;
        match &ex.target {
            Target::Slots(masked) => {
                let mut sse = 0.0;
                for (slot, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                    let p = &pred[slot * f..(slot + 1) * f];
                    let y = &scene.data[slot * f..(slot + 1) * f];
                    sse += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    let mut phys = p.to_vec();
                    norm.denormalize_point(&mut phys);
                    let truth = raw.point(slot / scene.n_steps, slot % scene.n_steps);
                    acc.add_point(&phys, truth);
                }
                acc.add_loss(sse, ex.count());
            }
            Target::Eta { queried, labels } => {
                let scaler = scaler.expect("checked above");
                let mut sse = 0.0;
                for n in (0..scene.n_agents).filter(|&n| queried[n]) {
                    sse += (pred[n] - labels[n]) * (pred[n] - labels[n]);
                    acc.add_eta(scaler.denormalize(pred[n]), raw.time_to_arrival[n]);
                }
                acc.add_loss(sse, ex.count());
            }
        }
    }
    Ok(acc)
}

/// Deterministic metrics of `task` on raw (unnormalized) scenes.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, scenes: &[Scene], task: Task) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::Empty("evaluation scenes"));
    }
    Ok(accumulate(predictor, scenes, task)?.report())
}

fn start_record(stage: &str, plan: &ExperimentPlan, bundle: &ModelBundle, train: usize) -> LogRecord {
    LogRecord::Start {
        stage: stage.into(),
        task: plan.task,
        seed: plan.seed,
        epochs: plan.epochs,
        lr: plan.lr,
        batch_size: plan.batch_size,
        parameters: bundle.model.parameter_count(),
        train_scenes: train,
    }
}

/// Masked-scene pre-training on the train split, validating each epoch.
pub fn pretrain(
    bundle: &mut ModelBundle,
    split: &Split,
    plan: &ExperimentPlan,
    log: &mut dyn RunObserver,
) -> Result<LossCurve> {
    plan.validate()?;
    if plan.mode != RunMode::Pretrain {
        return Err(Error::Config("pretrain needs a pretrain plan".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Empty("training scenes"));
    }
    log.record(start_record("pretrain", plan, bundle, split.train.len()));
    let train = normalize_all(&bundle.normalizer, &split.train);
    let val = normalize_all(&bundle.normalizer, &split.val);
    let spec = TrainSpec {
        stage: "pretrain".into(),
        plan,
        dropout: bundle.model.config.dropout_pretrain,
        scaler: None,
        salt: 0,
    };
    train_epochs(&mut bundle.model, &train, &val, &spec, log)
}

/// The training scenes selected by `plan.data_fraction`: a seeded sample,
/// kept in chronological order.
fn fraction_subset(train: &[Scene], plan: &ExperimentPlan) -> Result<Vec<Scene>> {
    let n = (plan.data_fraction * train.len() as f64).round() as usize;
    if n == 0 {
        return Err(Error::Config(format!(
            "fraction {} of {} scenes selects nothing",
            plan.data_fraction,
            train.len()
        )));
    }
    if n >= train.len() {
        return Ok(train.to_vec());
    }
    let mut idx = sample(&mut plan.rng(5), train.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| train[i].clone()).collect())
}

fn eta_labels(scenes: &[Scene]) -> Vec<f64> {
    scenes
        .iter()
        .flat_map(|s| {
            (0..s.n_agents)
                .filter(|&n| s.valid_len[n] > 0 && s.airborne_at_end(n))
                .map(|n| s.time_to_arrival[n])
        })
        .collect()
}

/// Fine-tunes (or, in scratch mode, trains a fresh model) on `plan.task`,
/// then reports test metrics. The normalizer is refitted on the selected
/// training scenes; ETA adds a decoder head when missing.
pub fn finetune(
    bundle: &mut ModelBundle,
    split: &Split,
    plan: &ExperimentPlan,
    log: &mut dyn RunObserver,
) -> Result<(LossCurve, MetricsReport)> {
    plan.validate()?;
    if !matches!(plan.mode, RunMode::Finetune | RunMode::Scratch) {
        return Err(Error::Config("finetune needs a finetune or scratch plan".into()));
    }
    let subset = fraction_subset(&split.train, plan)?;
    bundle.normalizer = Normalizer::fit(&subset)?;
    if plan.task == Task::Eta {
        bundle.eta_scaler = Some(TargetScaler::fit(&eta_labels(&subset))?);
        if bundle.model.decoder.is_none() {
            bundle.model.attach_decoder(1, &mut plan.rng(4))?;
        }
    }
    let stage = match plan.mode {
        RunMode::Scratch => "scratch",
        _ => "finetune",
    };
    log.record(start_record(stage, plan, bundle, subset.len()));
    let train = normalize_all(&bundle.normalizer, &subset);
    let val = normalize_all(&bundle.normalizer, &split.val);
    let spec = TrainSpec {
        stage: stage.into(),
        plan,
        dropout: bundle.model.config.dropout_finetune,
        scaler: bundle.eta_scaler,
        salt: 0,
    };
    let curve = train_epochs(&mut bundle.model, &train, &val, &spec, log)?;
    let report = evaluate(bundle, &split.test, plan.task)?;
    log.record(LogRecord::Metrics {
        stage: "test".into(),
        report: report.clone(),
    });
    Ok((curve, report))
}

pub fn finetune_trajectory(
    bundle: &mut ModelBundle,
    split: &Split,
    plan: &ExperimentPlan,
    log: &mut dyn RunObserver,
) -> Result<(LossCurve, MetricsReport)> {
    if plan.task != Task::Trajectory {
        return Err(Error::Config("plan task is not trajectory".into()));
    }
    finetune(bundle, split, plan, log)
}

pub fn finetune_eta(
    bundle: &mut ModelBundle,
    split: &Split,
    plan: &ExperimentPlan,
    log: &mut dyn RunObserver,
) -> Result<(LossCurve, MetricsReport)> {
    if plan.task != Task::Eta {
        return Err(Error::Config("plan task is not eta".into()));
    }
    finetune(bundle, split, plan, log)
}

/// One fine-tuning run per fraction, each from `pretrained`, all scored on
/// the same test scenes.
pub fn data_fraction_run(
    pretrained: &ModelBundle,
    split: &Split,
    fractions: &[f64],
    plan: &ExperimentPlan,
    log: &mut dyn RunObserver,
) -> Result<Vec<(f64, MetricsReport)>> {
    fractions
        .iter()
        .map(|&fraction| {
            let plan = ExperimentPlan {
                data_fraction: fraction,
                ..plan.clone()
            };
            let mut bundle = pretrained.clone();
            let (_, report) = finetune(&mut bundle, split, &plan, log)?;
            Ok((fraction, report))
        })
        .collect()
}

/// Label and ordinal of the period containing Unix time `t`.
pub fn period_key(t: i64, period: Period) -> (String, i64) {
    let day = t.div_euclid(86_400);
    let date = DateTime::from_timestamp(day * 86_400, 0)
        .expect("timestamp in range")
        .date_naive();
    match period {
        Period::Day => (
            format!("{:04}-{:02}-{:02}", date.year(), date.month(), date.day()),
            day,
        ),
        Period::Week => {
            let w = date.iso_week();
            (
                format!("{:04}-W{:02}", w.year(), w.week()),
                day - i64::from(date.weekday().num_days_from_monday()),
            )
        }
        Period::Month => (
            format!("{:04}-{:02}", date.year(), date.month()),
            i64::from(date.year()) * 12 + i64::from(date.month0()),
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodResult {
    pub label: String,
    pub n_scenes: usize,
    /// Metrics of the model before it saw this period; `None` when empty.
    pub report: Option<MetricsReport>,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalReport {
    pub period: Period,
    pub cycles: Vec<PeriodResult>,
    /// Pooled over every evaluated sample.
    pub overall: MetricsReport,
    pub updates: usize,
    pub mean_scenes_per_update: f64,
    /// Set when updates see fewer than [`OVERFIT_BATCHES`] batches of
    /// scenes on average.
    pub overfit_prone: bool,
}

/// Mean scenes per update, in batches, below which updates are flagged as
/// overfit-prone.
pub const OVERFIT_BATCHES: usize = 4;

/// Prequential updates: for every period from the first scene to the last,
/// evaluate the current model on the period's scenes, then fine-tune on
/// them. Empty periods are evaluated (trivially) and skipped.
pub fn incremental_run(
    pretrained: &ModelBundle,
    scenes: &[Scene],
    plan: &ExperimentPlan,
    log: &mut dyn RunObserver,
) -> Result<(ModelBundle, IncrementalReport)> {
    plan.validate()?;
    let period = plan
        .update_period
        .ok_or_else(|| Error::Config("incremental runs need an update period".into()))?;
    if scenes.is_empty() {
        return Err(Error::Empty("incremental scene stream"));
    }
    if plan.task == Task::Eta && (pretrained.eta_scaler.is_none() || pretrained.model.decoder.is_none()) {
        return Err(Error::Config(
            "incremental ETA needs a model already fine-tuned for ETA".into(),
        ));
    }
    let mut sorted = scenes.to_vec();
    sorted.sort_by_key(|s| s.window_start);
    let first_day = sorted[0].window_start.div_euclid(86_400);
    let last_day = sorted[sorted.len() - 1].window_start.div_euclid(86_400);
    let mut periods: Vec<(String, i64)> = Vec::new();
    for day in first_day..=last_day {
        let key = period_key(day * 86_400, period);
        if periods.last().map(|k| k.1) != Some(key.1) {
            periods.push(key);
        }
    }

    let mut bundle = pretrained.clone();
    log.record(start_record(
        &format!("incremental-{}", period.name()),
        plan,
        &bundle,
        sorted.len(),
    ));
    let mut overall = MetricsAccumulator::new(plan.task);
    let mut cycles = Vec::with_capacity(periods.len());
    let (mut updates, mut trained_scenes) = (0, 0);
    let mut next = 0;
    for (k, (label, ordinal)) in periods.into_iter().enumerate() {
        let start = next;
        while next < sorted.len() && period_key(sorted[next].window_start, period).1 == ordinal {
            next += 1;
        }
        let chunk = &sorted[start..next];
        let ids: Vec<i64> = chunk.iter().map(|s| s.window_start).collect();
        log.record(LogRecord::Eval {
            period: label.clone(),
            scenes: ids.clone(),
        });
        let report = if chunk.is_empty() {
            None
        } else {
            let acc = accumulate(&bundle, chunk, plan.task)?;
            overall.merge(&acc);
            Some(acc.report())
        };
        let normalized = normalize_all(&bundle.normalizer, chunk);
        let trainable = normalized
            .iter()
            .any(|s| Example::for_evaluation(s, plan.task, bundle.eta_scaler.as_ref()).is_some());
        if trainable {
            log.record(LogRecord::Train {
                period: label.clone(),
                scenes: ids,
            });
            let spec = TrainSpec {
                stage: format!("update-{label}"),
                plan,
                dropout: bundle.model.config.dropout_finetune,
                scaler: bundle.eta_scaler,
                salt: k as u64 + 1,
            };
            train_epochs(&mut bundle.model, &normalized, &[], &spec, log)?;
            updates += 1;
            trained_scenes += chunk.len();
        }
        cycles.push(PeriodResult {
            label,
            n_scenes: chunk.len(),
            report,
            trained: trainable,
        });
    }
    let mean_scenes_per_update = if updates == 0 {
        0.0
    } else {
        trained_scenes as f64 / updates as f64
    };
    let overall = overall.report();
    log.record(LogRecord::Metrics {
        stage: format!("incremental-{}", period.name()),
        report: overall.clone(),
    });
    let report = IncrementalReport {
        period,
        cycles,
        overall,
        updates,
        mean_scenes_per_update,
        overfit_prone: mean_scenes_per_update < (OVERFIT_BATCHES * plan.batch_size) as f64,
    };
    Ok((bundle, report))
}

/// Validation loss of `bundle` on raw scenes under `task`.
pub fn validation_loss(bundle: &ModelBundle, scenes: &[Scene], task: Task) -> Result<Option<f64>> {
    let normalized = normalize_all(&bundle.normalizer, scenes);
    eval_loss(&bundle.model, &normalized, task, bundle.eta_scaler.as_ref())
}
