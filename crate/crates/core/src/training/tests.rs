use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::engine::{run_example, train_epochs, TrainSpec};
use super::*;
use crate::geo::{reconstruct, resample_and_cut, ReconstructionConfig, DEFAULT_CUTOFF_NM, DEFAULT_DT_S};
use crate::model::Mode;
use crate::scene::assemble_scenes;
use crate::synth::{generate_day, make_airport_family};
use crate::tensor::Matrix;

const T: usize = 16;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 16,
        n_layers: 1,
        n_heads: 2,
        t_max: T,
        ..ModelConfig::desk(variant)
    }
}

/// Scenes from one synthetic day, cut into short windows.
fn day_scenes() -> Vec<Scene> {
    let spec = make_airport_family(1).a;
    let day = generate_day(&spec, 0, 1).unwrap();
    let cfg = ReconstructionConfig::default();
    let trajs: Vec<_> = day
        .tracks
        .iter()
        .map(|t| {
            let d = reconstruct(t, &cfg).unwrap();
            resample_and_cut(&d, DEFAULT_DT_S, spec.ref_point, DEFAULT_CUTOFF_NM).unwrap()
        })
        .collect();
    assemble_scenes(&trajs, T, DEFAULT_DT_S).unwrap()
}

fn small_split() -> Split {
    let scenes = day_scenes();
    let mut split = chronological_split(&scenes).unwrap();
    split.train.truncate(12);
    split.val.truncate(4);
    split.test.truncate(4);
    split
}

fn quick(plan: ExperimentPlan, epochs: usize) -> ExperimentPlan {
    ExperimentPlan {
        epochs,
        batch_size: 4,
        ..plan
    }
}

#[test]
fn split_is_chronological_80_10_10() {
    let mut scenes = day_scenes();
    scenes.truncate(25);
    scenes.reverse();
    let split = chronological_split(&scenes).unwrap();
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (21, 2, 2));
    let starts: Vec<i64> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .map(|s| s.window_start)
        .collect();
    assert!(starts.windows(2).all(|w| w[0] < w[1]));
    assert!(chronological_split(&scenes[..2]).is_err());
}

#[test]
fn plan_validation() {
    let ok = ExperimentPlan::finetune(Variant::AgentAware, Task::Trajectory, 0);
    ok.validate().unwrap();
    assert_eq!(ok.lr, TRAJECTORY_LR);
    assert_eq!(ExperimentPlan::finetune(Variant::AgentAware, Task::Eta, 0).lr, ETA_LR);
    assert_eq!(ExperimentPlan::scratch(Variant::MultiHead, Task::Eta, 0).batch_size, 16);
    for bad in [
        ExperimentPlan { epochs: 0, ..ok.clone() },
        ExperimentPlan { batch_size: 0, ..ok.clone() },
        ExperimentPlan { data_fraction: 0.0, ..ok.clone() },
        ExperimentPlan { data_fraction: 1.5, ..ok.clone() },
        ExperimentPlan { lr: f64::NAN, ..ok.clone() },
        ExperimentPlan { task: Task::MaskRecovery, ..ok.clone() },
        ExperimentPlan { mode: RunMode::Incremental, ..ok.clone() },
        ExperimentPlan { task: Task::Eta, ..ExperimentPlan::pretrain(Variant::AgentAware, 1, 0) },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn slot_loss_ignores_unmasked_slots() {
    let scene = day_scenes().into_iter().find(|s| s.n_agents > 1).unwrap();
    let slots = scene.n_agents * scene.n_steps;
    let masked: Vec<bool> = (0..slots).map(|i| i % 3 == 0).collect();
    let f = scene.n_features;
    let mut out = Matrix::from_vec(slots, f, scene.data.iter().map(|v| v + 0.5).collect()).unwrap();
    let base = slot_loss(&out, &scene, &masked).unwrap();
    assert!((base.value - 0.25).abs() < 1e-12);
    assert_eq!(base.count, masked.iter().filter(|&&m| m).count() * f);
    for (i, &m) in masked.iter().enumerate() {
        if !m {
            out[(i, 0)] += 100.0;
            assert_eq!(base.grad[i * f], 0.0);
        }
    }
    assert_eq!(slot_loss(&out, &scene, &masked).unwrap().value, base.value);
    assert!(slot_loss(&out, &scene, &vec![false; slots]).is_err());
}

/// The accumulated batch gradient matches finite differences of the pooled
/// mean squared error of two examples.
#[test]
fn batch_gradient_is_pooled_mean() {
    let scenes = day_scenes();
    let norm = Normalizer::fit(&scenes).unwrap();
    let pair: Vec<Scene> = normalize_all(&norm, &scenes[3..5]);
    for variant in [Variant::AgentAware, Variant::MultiHead] {
        let mut model = Model::new(tiny(variant), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let exs: Vec<Example<'_>> = pair
            .iter()
            .map(|s| Example::build(s, Task::MaskRecovery, &mut rng, None).unwrap())
            .collect();
        let total: usize = exs.iter().map(Example::count).sum();
        let pooled = |m: &Model| {
            exs.iter()
                .map(|e| run_example(m, e, &mut Mode::Eval, None).unwrap())
                .sum::<f64>()
                / total as f64
        };
        let mut grads = model.zeros_like();
        for e in &exs {
            run_example(&model, e, &mut Mode::Eval, Some((&mut grads, total))).unwrap();
        }
        let analytic: Vec<Matrix> = grads.params().into_iter().map(|(_, m)| m.clone()).collect();
        let h = 1e-5;
        for p in 0..analytic.len() {
            for k in [0, analytic[p].len() / 2] {
                let orig = model.params_mut()[p].as_slice()[k];
                model.params_mut()[p].as_mut_slice()[k] = orig + h;
                let up = pooled(&model);
                model.params_mut()[p].as_mut_slice()[k] = orig - h;
                let down = pooled(&model);
                model.params_mut()[p].as_mut_slice()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[p].as_slice()[k];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1.0) < 1e-6, "{p}/{k}: {fd} vs {a}");
            }
        }
    }
}

struct Oracle(Normalizer, TargetScaler);

impl Predictor for Oracle {
    fn normalizer(&self) -> &Normalizer {
        &self.0
    }

    fn eta_scaler(&self) -> Option<&TargetScaler> {
        Some(&self.1)
    }

    fn predict(&self, ex: &Example<'_>) -> Result<Vec<f64>> {
        Ok(match &ex.target {
            Target::Slots(_) => ex.scene.data.clone(),
            Target::Eta { labels, .. } => labels.clone(),
        })
    }
}

#[test]
fn perfect_predictor_scores_zero() {
    let scenes = day_scenes();
    let oracle = Oracle(Normalizer::fit(&scenes).unwrap(), TargetScaler { mean: 300.0, std: 120.0 });
    for task in [Task::MaskRecovery, Task::Trajectory] {
        let r = evaluate(&oracle, &scenes, task).unwrap();
        assert!(r.n_samples > 0);
        assert!(r.he_nm.unwrap() < 1e-6 && r.ve_ft.unwrap() < 1e-6 && r.mse == 0.0, "{r:?}");
        assert_eq!((r.mae_s, r.rmse_s), (None, None));
    }
    let r = evaluate(&oracle, &scenes, Task::Eta).unwrap();
    assert!(r.mae_s.unwrap() < 1e-9 && r.rmse_s.unwrap() < 1e-9 && r.he_nm.is_none());
    assert!(matches!(evaluate(&oracle, &[], Task::Eta), Err(Error::Empty(_))));
}

#[test]
fn eta_metrics_by_hand() {
    let mut acc = MetricsAccumulator::new(Task::Eta);
    for (p, t) in [(10.0, 12.0), (20.0, 17.0), (30.0, 30.0)] {
        acc.add_eta(p, t);
    }
    let r = acc.report();
    assert!((r.mae_s.unwrap() - 5.0 / 3.0).abs() < 1e-12);
    assert!((r.rmse_s.unwrap() - (13.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(r.n_samples, 3);
    let mut merged = MetricsAccumulator::new(Task::Eta);
    merged.merge(&acc);
    assert_eq!(merged.report(), r);
}

proptest! {
    #[test]
    fn rmse_at_least_mae(errs in prop::collection::vec(-1e4f64..1e4, 1..40)) {
        let mut acc = MetricsAccumulator::new(Task::Eta);
        for e in &errs {
            acc.add_eta(*e, 0.0);
        }
        let r = acc.report();
        prop_assert!(r.rmse_s.unwrap() >= r.mae_s.unwrap());
    }
}

#[test]
fn evaluation_is_repeatable() {
    let split = small_split();
    let bundle = ModelBundle::new(tiny(Variant::AgentAware), &split.train, 5).unwrap();
    for task in [Task::MaskRecovery, Task::Trajectory] {
        assert_eq!(
            evaluate(&bundle, &split.test, task).unwrap(),
            evaluate(&bundle, &split.test, task).unwrap()
        );
    }
    assert!(matches!(evaluate(&bundle, &split.test, Task::Eta), Err(Error::Config(_))));
}

#[test]
fn training_is_deterministic_and_learns() {
    let split = small_split();
    let plan = ExperimentPlan {
        lr: 3e-3,
        ..quick(ExperimentPlan::pretrain(Variant::AgentAware, 0, 9), 15)
    };
    let run = || {
        let mut bundle = ModelBundle::new(tiny(Variant::AgentAware), &split.train, 9).unwrap();
        let mut log = Vec::new();
        let curve = pretrain(&mut bundle, &split, &plan, &mut log).unwrap();
        (bundle, curve, log)
    };
    let (a, curve, log) = run();
    let (b, curve_b, _) = run();
    assert_eq!(a, b);
    assert_eq!(curve, curve_b);
    assert_eq!(curve.train.len(), 15);
    assert!(curve.train[14] < curve.train[0], "{:?}", curve.train);
    assert!(curve.val.iter().all(Option::is_some));
    assert!(matches!(log[0], LogRecord::Start { train_scenes: 12, .. }));
    assert_eq!(log.len(), 16);
}

#[test]
fn full_fraction_matches_plain_finetune() {
    let split = small_split();
    let pre = ModelBundle::new(tiny(Variant::AgentAware), &split.train, 2).unwrap();
    let plan = quick(ExperimentPlan::finetune(Variant::AgentAware, Task::Trajectory, 4), 2);
    let mut plain = pre.clone();
    let (_, report) = finetune_trajectory(&mut plain, &split, &plan, &mut ()).unwrap();
    let mut log = Vec::new();
    let runs = data_fraction_run(&pre, &split, &[0.5, 1.0], &plan, &mut log).unwrap();
    assert_eq!(runs[1], (1.0, report));
    let sizes: Vec<usize> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Start { train_scenes, .. } => Some(*train_scenes),
            _ => None,
        })
        .collect();
    assert_eq!(sizes, vec![6, 12]);
    let tiny_fraction = ExperimentPlan { data_fraction: 0.01, ..plan };
    assert!(matches!(
        finetune(&mut pre.clone(), &split, &tiny_fraction, &mut ()),
        Err(Error::Config(_))
    ));
}

#[test]
fn eta_finetune_adds_head_and_scaler() {
    let split = small_split();
    let mut bundle = ModelBundle::new(tiny(Variant::MultiHead), &split.train, 2).unwrap();
    let plan = quick(ExperimentPlan::finetune(Variant::MultiHead, Task::Eta, 1), 2);
    assert!(finetune_eta(&mut bundle.clone(), &split, &ExperimentPlan { task: Task::Trajectory, ..plan.clone() }, &mut ()).is_err());
    let (curve, report) = finetune_eta(&mut bundle, &split, &plan, &mut ()).unwrap();
    assert!(bundle.model.decoder.is_some() && bundle.eta_scaler.is_some());
    assert!(report.mae_s.unwrap() > 0.0 && report.n_samples > 0);
    assert!(curve.last_val().is_some());
}

#[test]
fn period_labels() {
    let jan1 = 1_546_300_800; // Tuesday
    assert_eq!(period_key(jan1 + 3600, Period::Day).0, "2019-01-01");
    assert_eq!(period_key(jan1, Period::Week).0, "2019-W01");
    assert_eq!(period_key(jan1 - 86_400, Period::Week), period_key(jan1, Period::Week));
    assert_ne!(period_key(jan1 + 6 * 86_400, Period::Week), period_key(jan1, Period::Week));
    assert_eq!(period_key(jan1 + 30 * 86_400, Period::Month).0, "2019-01");
    assert_eq!(period_key(jan1 + 31 * 86_400, Period::Month).0, "2019-02");
    assert_eq!(period_key(jan1 + 364 * 86_400, Period::Day).0, "2019-12-31");
}

/// Copies of a few scenes, one every `gap_days`, across `days` days.
fn spread(scenes: &[Scene], days: i64, gap_days: i64) -> Vec<Scene> {
    let base = scenes[0].window_start;
    (0..days / gap_days)
        .map(|k| {
            let mut s = scenes[k as usize % scenes.len()].clone();
            s.window_start = base + k * gap_days * 86_400;
            s
        })
        .collect()
}

#[test]
fn monthly_updates_over_a_year() {
    let split = small_split();
    let stream = spread(&split.train, 365, 9);
    let pre = ModelBundle::new(tiny(Variant::AgentAware), &split.train, 3).unwrap();
    let plan = quick(ExperimentPlan::incremental(Variant::AgentAware, Task::Trajectory, Period::Month, 1), 1);
    let mut log = Vec::new();
    let (_, report) = incremental_run(&pre, &stream, &plan, &mut log).unwrap();
    let labels: Vec<&str> = report.cycles.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels.len(), 12);
    assert_eq!((labels[0], labels[11]), ("2019-01", "2019-12"));
    assert_eq!(report.cycles.iter().map(|c| c.n_scenes).sum::<usize>(), stream.len());
    assert!(report.overfit_prone);
    let lines: Vec<String> = log.iter().map(|r| r.to_string()).collect();
    assert!(prequential_violations(lines.iter().map(String::as_str)).is_empty());
}

#[test]
fn empty_days_are_evaluate_only() {
    let split = small_split();
    let stream = spread(&split.train, 12, 3);
    let pre = ModelBundle::new(tiny(Variant::AgentAware), &split.train, 3).unwrap();
    let plan = quick(ExperimentPlan::incremental(Variant::AgentAware, Task::Trajectory, Period::Day, 1), 1);
    let mut log = Vec::new();
    let (_, report) = incremental_run(&pre, &stream, &plan, &mut log).unwrap();
    assert_eq!(report.cycles.len(), 10);
    for (i, c) in report.cycles.iter().enumerate() {
        assert_eq!(c.n_scenes > 0, i % 3 == 0);
        assert_eq!(c.trained, c.n_scenes > 0);
        assert_eq!(c.report.is_some(), c.n_scenes > 0);
    }
    assert_eq!(report.updates, 4);
    let evals = log.iter().filter(|r| matches!(r, LogRecord::Eval { .. })).count();
    assert_eq!(evals, 10);
}

#[test]
fn incremental_eta_needs_eta_model() {
    let split = small_split();
    let pre = ModelBundle::new(tiny(Variant::AgentAware), &split.train, 3).unwrap();
    let plan = ExperimentPlan::incremental(Variant::AgentAware, Task::Eta, Period::Week, 1);
    assert!(matches!(incremental_run(&pre, &split.train, &plan, &mut ()), Err(Error::Config(_))));
}

#[test]
fn prequential_checker_flags_unseen_training() {
    let good = ["event=eval period=p scenes=1,2", "event=train period=p scenes=2,1"];
    assert!(prequential_violations(good).is_empty());
    let bad = ["event=eval period=p scenes=1", "event=train period=p scenes=1,3"];
    let v = prequential_violations(bad);
    assert_eq!(v.len(), 1);
    assert!(v[0].contains("scene 3"));
}

#[test]
fn log_lines_parse() {
    let rec = LogRecord::Epoch {
        stage: "pretrain".into(),
        epoch: 3,
        train_loss: 0.25,
        val_loss: None,
    };
    let line = rec.to_string();
    let pairs = parse_log_line(&line).unwrap();
    assert_eq!(
        pairs,
        vec![("event", "epoch"), ("stage", "pretrain"), ("epoch", "3"), ("train_loss", "0.25"), ("val_loss", "na")]
    );
    assert!(parse_log_line("event=x broken").is_none());
}

#[test]
fn overflowing_loss_reports_divergence() {
    let scenes = day_scenes();
    let norm = Normalizer::fit(&scenes).unwrap();
    let scene = scenes.iter().find(|s| s.valid_len.iter().any(|&v| v == T)).unwrap();
    let n = scene.valid_len.iter().position(|&v| v == T).unwrap();
    let mut single = norm.normalize(&scene.select_agents(&[n]));
    for t in T - PREDICTION_HORIZON..T {
        single.point_mut(0, t).fill(1e200);
    }
    let model_cfg = tiny(Variant::AgentAware);
    let mut model = Model::new(model_cfg, 1).unwrap();
    let plan = quick(ExperimentPlan::finetune(Variant::AgentAware, Task::Trajectory, 1), 1);
    let spec = TrainSpec {
        stage: "t".into(),
        plan: &plan,
        dropout: 0.0,
        scaler: None,
        salt: 0,
    };
    let err = train_epochs(&mut model, &[single], &[], &spec, &mut ()).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, batch: 0 }), "{err:?}");
}
