//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use mabert_core::geo::{reconstruct, resample_and_cut, ReconstructionConfig, Trajectory};
use mabert_core::model::ModelConfig;
use mabert_core::scene::{assemble_scenes, Scene};
use mabert_core::synth::generate;
use mabert_core::training::{
    chronological_split, data_fraction_run, evaluate, finetune, incremental_run,
    prequential_violations, pretrain, LogRecord, LossCurve, MetricsReport, ModelBundle, Period,
    RunObserver, Split, Task,
};
use serde_json::json;

use crate::checkpoint::{self, sha256_hex, Manifest, Provenance};
use crate::config::{existing, ModelSection, RunConfig};
use crate::container::{decode_scenes, encode_scenes};
use crate::csvio::{read_tracks, write_trajectories, write_tracks};
use crate::fsutil::{write_atomic, write_atomic_str};
use crate::report::{loss_curve_csv, metrics_of, plot_data, ReportTable};

/// Collects run log lines, echoing them to stderr when asked.
pub struct RunLog {
    pub lines: Vec<String>,
    echo: bool,
    started: Instant,
}

impl RunLog {
    pub fn new(echo: bool) -> Self {
        Self {
            lines: Vec::new(),
            echo,
            started: Instant::now(),
        }
    }

    pub fn note(&mut self, line: String) {
        if self.echo {
            eprintln!("{line}");
        }
        self.lines.push(line);
    }

    /// Appends the closing record with wall time and writes the file.
    pub fn finish(mut self, command: &str, path: &Path) -> Result<()> {
        let secs = self.started.elapsed().as_secs_f64();
        self.note(format!("event=done command={command} wall_time_s={secs:.3}"));
        let mut text = self.lines.join("\n");
        text.push('\n');
        write_atomic_str(path, &text)
    }
}

impl RunObserver for RunLog {
    fn record(&mut self, record: LogRecord) {
        self.note(record.to_string());
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    Ok(cfg.out_dir()?.join(name))
}

pub fn load_scenes(path: &Path) -> Result<(Vec<Scene>, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let scenes = decode_scenes(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    ensure!(!scenes.is_empty(), "{} holds no scenes", path.display());
    Ok((scenes, sha256_hex(&bytes)))
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<(ModelBundle, Manifest, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (bundle, manifest) = match expected {
        Some(cfg) => checkpoint::decode_expecting(&bytes, cfg),
        None => checkpoint::decode(&bytes),
    }
    .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((bundle, manifest, sha256_hex(&bytes)))
}

fn save_checkpoint(path: &Path, bundle: &ModelBundle, provenance: Provenance) -> Result<String> {
    let bytes = checkpoint::encode(bundle, provenance)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// The run's model configuration, if the config file spells one out.
fn explicit_model(cfg: &RunConfig) -> Result<Option<ModelConfig>> {
    if cfg.model == ModelSection::default() {
        Ok(None)
    } else {
        cfg.model_config().map(Some)
    }
}

fn write_curve(cfg: &RunConfig, curve: &LossCurve) -> Result<()> {
    write_atomic_str(&out_path(cfg, "loss_curve.csv")?, &loss_curve_csv(curve))?;
    let epochs = |f: &dyn Fn(usize) -> Option<f64>| -> Vec<(f64, f64)> {
        (0..curve.train.len())
            .filter_map(|i| f(i).map(|y| ((i + 1) as f64, y)))
            .collect()
    };
    let train = epochs(&|i| Some(curve.train[i]));
    let val = epochs(&|i| curve.val[i]);
    write_atomic_str(&out_path(cfg, "loss_train.dat")?, &plot_data("epoch", "train_loss", &train))?;
    write_atomic_str(&out_path(cfg, "loss_val.dat")?, &plot_data("epoch", "val_loss", &val))?;
    Ok(())
}

fn write_summary(cfg: &RunConfig, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic_str(&out_path(cfg, "summary.json")?, &text)
}

fn airport_label(cfg: &RunConfig) -> String {
    cfg.train.airport.clone().unwrap_or_else(|| "-".into())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    for (spec, days) in cfg.synth_plan()? {
        let traffic = generate(&spec, days, seed)?;
        let tracks: Vec<_> = traffic.iter().flat_map(|d| d.tracks.iter().cloned()).collect();
        let mut buf = Vec::new();
        write_tracks(&mut buf, &tracks)?;
        let path = out_path(cfg, &format!("{}.csv", spec.name))?;
        write_atomic(&path, &buf)?;
        println!(
            "airport={} days={days} flights={} file={}",
            spec.name,
            tracks.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let input = existing(cfg.preprocess.input.as_ref(), "preprocess.input")?;
    let airport_ref = cfg.ref_point()?;
    let recon = ReconstructionConfig::new(
        cfg.preprocess.lambda2.unwrap_or(ReconstructionConfig::default().lambda2),
        cfg.preprocess.lambda3.unwrap_or(ReconstructionConfig::default().lambda3),
    )?;
    let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let tracks = read_tracks(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", input.display()))?;
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(tracks.len());
    let mut skipped = 0;
    for t in &tracks {
        let dense = reconstruct(t, &recon)?;
        match resample_and_cut(&dense, cfg.dt(), airport_ref, cfg.cutoff_nm()) {
            Ok(traj) => trajs.push(traj),
            Err(mabert_core::Error::TrajectoryTooShort(id)) => {
                eprintln!("skipping {id}: too short after cutting");
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let scenes = assemble_scenes(&trajs, cfg.scene_steps(), cfg.dt())?;
    let mut buf = Vec::new();
    write_trajectories(&mut buf, &trajs)?;
    write_atomic(&out_path(cfg, "trajectories.csv")?, &buf)?;
    write_atomic(&out_path(cfg, "scenes.bin")?, &encode_scenes(&scenes))?;
    println!(
        "flights={} skipped={skipped} scenes={} file={}",
        trajs.len(),
        scenes.len(),
        out_path(cfg, "scenes.bin")?.display()
    );
    Ok(())
}

fn training_scenes(cfg: &RunConfig) -> Result<(Vec<Scene>, String)> {
    load_scenes(&existing(cfg.train.scenes.as_ref(), "train.scenes")?)
}

pub fn pretrain_cmd(cfg: &RunConfig, echo: bool) -> Result<()> {
    let plan = cfg.pretrain_plan()?;
    let model_cfg = cfg.model_config()?;
    let (scenes, scenes_sha) = training_scenes(cfg)?;
    let split = chronological_split(&scenes)?;
    let mut bundle = ModelBundle::new(model_cfg, &split.train, plan.seed)?;
    let mut log = RunLog::new(echo);
    let curve = pretrain(&mut bundle, &split, &plan, &mut log)?;
    save_checkpoint(
        &out_path(cfg, "model.ckpt")?,
        &bundle,
        Provenance {
            command: "pretrain".into(),
            plan: Some(plan),
            scenes_sha256: Some(scenes_sha),
            parent_sha256: None,
        },
    )?;
    write_curve(cfg, &curve)?;
    log.finish("pretrain", &out_path(cfg, "run.log")?)
}

/// The parent checkpoint if configured, else a fresh model.
fn start_bundle(cfg: &RunConfig, split: &Split, seed: u64) -> Result<(ModelBundle, Option<String>)> {
    match &cfg.train.checkpoint {
        Some(p) => {
            let path = existing(Some(p), "train.checkpoint")?;
            let (bundle, _, sha) = load_checkpoint(&path, explicit_model(cfg)?.as_ref())?;
            Ok((bundle, Some(sha)))
        }
        None => Ok((ModelBundle::new(cfg.model_config()?, &split.train, seed)?, None)),
    }
}

pub fn finetune_cmd(cfg: &RunConfig, echo: bool) -> Result<()> {
    let (scenes, scenes_sha) = training_scenes(cfg)?;
    let split = chronological_split(&scenes)?;
    let (mut bundle, parent) = start_bundle(cfg, &split, cfg.seed()?)?;
    let plan = cfg.finetune_plan(bundle.model.config.variant)?;
    let mut log = RunLog::new(echo);
    let (curve, report) = finetune(&mut bundle, &split, &plan, &mut log)?;
    let method = format!("{}-{}", bundle.model.config.variant.name(), RunConfig::mode_name(&plan));
    let sha = save_checkpoint(
        &out_path(cfg, "model.ckpt")?,
        &bundle,
        Provenance {
            command: "finetune".into(),
            plan: Some(plan.clone()),
            scenes_sha256: Some(scenes_sha),
            parent_sha256: parent.clone(),
        },
    )?;
    write_curve(cfg, &curve)?;
    let mut table = ReportTable::new(vec![method.clone()]);
    table.add(&airport_label(cfg), &[Some(&report)]);
    write_atomic_str(&out_path(cfg, "report.csv")?, &table.to_csv())?;
    write_summary(
        cfg,
        &json!({
            "command": "finetune",
            "airport": airport_label(cfg),
            "method": method,
            "plan": plan,
            "checkpoint_sha256": sha,
            "parent_sha256": parent,
            "final_val_loss": curve.last_val(),
            "test": report,
        }),
    )?;
    log.finish("finetune", &out_path(cfg, "run.log")?)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let e = &cfg.evaluate;
    let paths = match (&e.checkpoints, &cfg.train.checkpoint) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => vec![p.clone()],
        (None, None) => bail!("evaluate needs `evaluate.checkpoints` or `train.checkpoint`"),
    };
    ensure!(!paths.is_empty(), "evaluate.checkpoints is empty");
    let scenes_path = existing(e.scenes.as_ref().or(cfg.train.scenes.as_ref()), "evaluate.scenes")?;
    let (scenes, scenes_sha) = load_scenes(&scenes_path)?;
    let held = match e.split.as_deref().unwrap_or("test") {
        "test" => chronological_split(&scenes)?.test,
        "all" => scenes,
        other => bail!("evaluate.split must be `test` or `all`, got {other:?}"),
    };
    let mut bundles = Vec::new();
    for p in &paths {
        let (bundle, _, sha) = load_checkpoint(&existing(Some(p), "evaluate.checkpoints")?, None)?;
        bundles.push((bundle, sha));
    }
    let methods = match &e.methods {
        Some(m) => {
            ensure!(m.len() == paths.len(), "evaluate.methods needs one name per checkpoint");
            m.clone()
        }
        None => bundles.iter().map(|(b, _)| b.model.config.variant.name().to_string()).collect(),
    };
    let tasks = e.tasks.clone().unwrap_or_else(|| {
        let mut t = vec![Task::Trajectory];
        if bundles.iter().any(|(b, _)| b.eta_scaler.is_some()) {
            t.push(Task::Eta);
        }
        t
    });
    let mut table = ReportTable::new(methods.clone());
    let mut results = Vec::new();
    for task in tasks {
        let mut reports: Vec<Option<MetricsReport>> = Vec::new();
        for (b, _) in &bundles {
            let capable = task != Task::Eta || (b.eta_scaler.is_some() && b.model.decoder.is_some());
            reports.push(if capable { Some(evaluate(b, &held, task)?) } else { None });
        }
        let refs: Vec<Option<&MetricsReport>> = reports.iter().map(Option::as_ref).collect();
        table.add(&airport_label(cfg), &refs);
        for (m, r) in methods.iter().zip(&reports) {
            results.push(json!({ "method": m, "task": task, "report": r }));
        }
    }
    write_atomic_str(&out_path(cfg, "report.csv")?, &table.to_csv())?;
    write_summary(
        cfg,
        &json!({
            "command": "evaluate",
            "airport": airport_label(cfg),
            "scenes_sha256": scenes_sha,
            "checkpoints": bundles.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>(),
            "evaluated_scenes": held.len(),
            "results": results,
        }),
    )?;
    print!("{}", table.to_csv());
    Ok(())
}

fn parent_bundle(cfg: &RunConfig) -> Result<(ModelBundle, String)> {
    let path = existing(cfg.train.checkpoint.as_ref(), "train.checkpoint")?;
    let (bundle, _, sha) = load_checkpoint(&path, explicit_model(cfg)?.as_ref())?;
    Ok((bundle, sha))
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

pub fn fraction_cmd(cfg: &RunConfig, echo: bool) -> Result<()> {
    let (scenes, scenes_sha) = training_scenes(cfg)?;
    let split = chronological_split(&scenes)?;
    let (pretrained, parent) = parent_bundle(cfg)?;
    let fractions = cfg.fraction.fractions.clone().unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    let plan = cfg.finetune_plan(pretrained.model.config.variant)?;
    let mut log = RunLog::new(echo);
    let runs = data_fraction_run(&pretrained, &split, &fractions, &plan, &mut log)?;
    let methods: Vec<String> = fractions.iter().map(|f| format!("fraction_{f}")).collect();
    let mut table = ReportTable::new(methods);
    let refs: Vec<Option<&MetricsReport>> = runs.iter().map(|(_, r)| Some(r)).collect();
    table.add(&airport_label(cfg), &refs);
    write_atomic_str(&out_path(cfg, "report.csv")?, &table.to_csv())?;
    if let Some((_, first)) = runs.first() {
        for (k, (metric, _)) in metrics_of(first).into_iter().enumerate() {
            let points: Vec<(f64, f64)> = runs
                .iter()
                .filter_map(|(f, r)| metrics_of(r)[k].1.map(|v| (*f, v)))
                .collect();
            write_atomic_str(
                &out_path(cfg, &format!("fraction_{metric}.dat"))?,
                &plot_data("fraction", metric, &points),
            )?;
        }
    }
    let rows: Vec<_> = runs
        .iter()
        .map(|(f, r)| json!({ "fraction": f, "test": r }))
        .collect();
    write_summary(
        cfg,
        &json!({
            "command": "fraction",
            "airport": airport_label(cfg),
            "plan": plan,
            "parent_sha256": parent,
            "scenes_sha256": scenes_sha,
            "runs": rows,
        }),
    )?;
    log.finish("fraction", &out_path(cfg, "run.log")?)
}

pub fn incremental_cmd(cfg: &RunConfig, echo: bool) -> Result<()> {
    let (scenes, scenes_sha) = training_scenes(cfg)?;
    let (pretrained, parent) = parent_bundle(cfg)?;
    let periods = cfg
        .incremental
        .periods
        .clone()
        .unwrap_or_else(|| vec![Period::Day, Period::Week, Period::Month]);
    let mut table = ReportTable::new(periods.iter().map(|p| p.name().to_string()).collect());
    let mut overall = Vec::new();
    let mut summaries = Vec::new();
    for &period in &periods {
        let plan = cfg.incremental_plan(pretrained.model.config.variant, period)?;
        let mut log = RunLog::new(echo);
        let (_, report) = incremental_run(&pretrained, &scenes, &plan, &mut log)?;
        let violations = prequential_violations(log.lines.iter().map(String::as_str));
        let mut cycles = String::from("period,n_scenes,trained");
        let metric_names: Vec<&str> = metrics_of(&report.overall).iter().map(|m| m.0).collect();
        for m in &metric_names {
            cycles.push(',');
            cycles.push_str(m);
        }
        cycles.push('\n');
        for c in &report.cycles {
            cycles.push_str(&format!("{},{},{}", c.label, c.n_scenes, c.trained));
            for k in 0..metric_names.len() {
                cycles.push(',');
                if let Some(v) = c.report.as_ref().and_then(|r| metrics_of(r)[k].1) {
                    cycles.push_str(&v.to_string());
                }
            }
            cycles.push('\n');
        }
        write_atomic_str(&out_path(cfg, &format!("cycles_{}.csv", period.name()))?, &cycles)?;
        summaries.push(json!({
            "period": period,
            "cycles": report.cycles.len(),
            "updates": report.updates,
            "mean_scenes_per_update": report.mean_scenes_per_update,
            "overfit_prone": report.overfit_prone,
            "prequential_violations": violations.len(),
            "overall": report.overall,
        }));
        overall.push(report.overall);
        log.finish("incremental", &out_path(cfg, &format!("run_{}.log", period.name()))?)?;
    }
    let refs: Vec<Option<&MetricsReport>> = overall.iter().map(Some).collect();
    table.add(&airport_label(cfg), &refs);
    write_atomic_str(&out_path(cfg, "report.csv")?, &table.to_csv())?;
    write_summary(
        cfg,
        &json!({
            "command": "incremental",
            "airport": airport_label(cfg),
            "parent_sha256": parent,
            "scenes_sha256": scenes_sha,
            "periods": summaries,
        }),
    )
}

/// Human-readable description of a checkpoint or scene container.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(checkpoint::MAGIC) {
        let (manifest, _) = checkpoint::read_manifest(&bytes)?;
        let (bundle, _) = checkpoint::decode(&bytes)?;
        let mut s = format!(
            "checkpoint format={} sha256={}\nmodel={}\nparameters={}\nprovenance={}\n",
            manifest.format_version,
            sha256_hex(&bytes),
            serde_json::to_string(&manifest.model)?,
            bundle.model.parameter_count(),
            serde_json::to_string(&manifest.provenance)?
        );
        for e in &manifest.registry {
            s.push_str(&format!("  {} {}x{} @{}\n", e.name, e.shape[0], e.shape[1], e.offset));
        }
        Ok(s)
    } else if bytes.starts_with(crate::container::MAGIC) {
        let scenes = decode_scenes(&bytes)?;
        let agents: usize = scenes.iter().map(|s| s.n_agents).sum();
        let first = scenes.first().map_or(0, |s| s.window_start);
        let last = scenes.last().map_or(0, |s| s.window_start);
        Ok(format!(
            "scenes={} agents={} mean_agents={:.2} steps={} first_window={first} last_window={last}\n",
            scenes.len(),
            agents,
            agents as f64 / scenes.len().max(1) as f64,
            scenes.first().map_or(0, |s| s.n_steps),
        ))
    } else {
        bail!("{} is neither a checkpoint nor a scene container", path.display())
    }
}
