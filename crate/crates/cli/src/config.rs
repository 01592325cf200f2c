//! Run configuration, one TOML file per experiment.
//!
//! ```toml
//! seed = 7
//! out = "runs/a"
//! family_seed = 0
//!
//! [synth]
//! airports = ["A", "B", "C"]
//! days = [60, 20, 20]
//!
//! [preprocess]
//! input = "runs/synth/A.csv"
//! airport = "A"
//! t_max = 60
//!
//! [model]
//! preset = "desk"
//! variant = "ma-bert"
//!
//! [train]
//! scenes = "runs/a/scenes.bin"
//! task = "trajectory"
//! ```
//!
//! Every section is optional; subcommands check for what they need.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mabert_core::geo::{DEFAULT_CUTOFF_NM, DEFAULT_DT_S};
use mabert_core::model::{ModelConfig, Variant};
use mabert_core::scene::DEFAULT_T_MAX;
use mabert_core::synth::{make_airport_family, AirportSpec, FAMILY_DAYS};
use mabert_core::training::{ExperimentPlan, Period, RunMode, Task};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Seeds the airport geometry, separately from the traffic seed.
    #[serde(default)]
    pub family_seed: u64,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub fraction: FractionSection,
    #[serde(default)]
    pub incremental: IncrementalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub airports: Option<Vec<String>>,
    pub days: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub input: Option<PathBuf>,
    /// Family airport whose reference point is used.
    pub airport: Option<String>,
    /// `[lon, lat]`; overrides `airport`.
    pub ref_point: Option<[f64; 2]>,
    pub dt: Option<i64>,
    pub cutoff_nm: Option<f64>,
    pub t_max: Option<usize>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub preset: Preset,
    pub variant: Option<Variant>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub t_max: Option<usize>,
    pub dropout_pretrain: Option<f64>,
    pub dropout_finetune: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub scenes: Option<PathBuf>,
    /// Parent checkpoint; fine-tuning without one trains from scratch.
    pub checkpoint: Option<PathBuf>,
    pub task: Option<Task>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub data_fraction: Option<f64>,
    /// Label for report rows.
    pub airport: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub checkpoints: Option<Vec<PathBuf>>,
    /// Column names, one per checkpoint; defaults to the model variants.
    pub methods: Option<Vec<String>>,
    pub scenes: Option<PathBuf>,
    /// `test` (default) evaluates the held-out block, `all` every scene.
    pub split: Option<String>,
    pub tasks: Option<Vec<Task>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionSection {
    pub fractions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementalSection {
    pub periods: Option<Vec<Period>>,
}

/// Default pre-training length in epochs.
pub const PRETRAIN_EPOCHS: usize = 100;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .context("`seed` is required for this subcommand (config key or --seed)")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("`out` is required (config key or --out)")
    }

    pub fn airport(&self, name: &str) -> Result<AirportSpec> {
        let fam = make_airport_family(self.family_seed);
        Ok(match name {
            "A" => fam.a,
            "B" => fam.b,
            "C" => fam.c,
            other => bail!("unknown airport {other:?}; expected A, B or C"),
        })
    }

    /// `(airport, days)` pairs to generate.
    pub fn synth_plan(&self) -> Result<Vec<(AirportSpec, u32)>> {
        let names = self
            .synth
            .airports
            .clone()
            .unwrap_or_else(|| vec!["A".into(), "B".into(), "C".into()]);
        let days = match &self.synth.days {
            Some(d) => {
                ensure!(d.len() == names.len(), "synth.days needs one entry per airport");
                d.clone()
            }
            None => names
                .iter()
                .map(|n| match n.as_str() {
                    "A" => FAMILY_DAYS.0,
                    "B" => FAMILY_DAYS.1,
                    _ => FAMILY_DAYS.2,
                })
                .collect(),
        };
        names
            .iter()
            .zip(days)
            .map(|(n, d)| Ok((self.airport(n)?, d)))
            .collect()
    }

    pub fn ref_point(&self) -> Result<(f64, f64)> {
        if let Some([lon, lat]) = self.preprocess.ref_point {
            return Ok((lon, lat));
        }
        let name = self
            .preprocess
            .airport
            .as_deref()
            .context("preprocess needs `ref_point` or `airport`")?;
        Ok(self.airport(name)?.ref_point)
    }

    pub fn dt(&self) -> i64 {
        self.preprocess.dt.unwrap_or(DEFAULT_DT_S)
    }

    pub fn cutoff_nm(&self) -> f64 {
        self.preprocess.cutoff_nm.unwrap_or(DEFAULT_CUTOFF_NM)
    }

    pub fn scene_steps(&self) -> usize {
        self.preprocess.t_max.unwrap_or(DEFAULT_T_MAX)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let variant = m.variant.unwrap_or(Variant::AgentAware);
        let base = match m.preset {
            Preset::Desk => ModelConfig::desk(variant),
            Preset::Full => ModelConfig::full(variant),
        };
        let cfg = ModelConfig {
            d_model: m.d_model.unwrap_or(base.d_model),
            d_ff: m.d_ff.unwrap_or(base.d_ff),
            n_layers: m.n_layers.unwrap_or(base.n_layers),
            n_heads: m.n_heads.unwrap_or(base.n_heads),
            t_max: m.t_max.unwrap_or(base.t_max),
            dropout_pretrain: m.dropout_pretrain.unwrap_or(base.dropout_pretrain),
            dropout_finetune: m.dropout_finetune.unwrap_or(base.dropout_finetune),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn task(&self) -> Task {
        self.train.task.unwrap_or(Task::Trajectory)
    }

    fn apply_overrides(&self, plan: ExperimentPlan) -> Result<ExperimentPlan> {
        let t = &self.train;
        let plan = ExperimentPlan {
            epochs: t.epochs.unwrap_or(plan.epochs),
            lr: t.lr.unwrap_or(plan.lr),
            batch_size: t.batch_size.unwrap_or(plan.batch_size),
            data_fraction: t.data_fraction.unwrap_or(plan.data_fraction),
            ..plan
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn pretrain_plan(&self) -> Result<ExperimentPlan> {
        let variant = self.model_config()?.variant;
        self.apply_overrides(ExperimentPlan::pretrain(variant, PRETRAIN_EPOCHS, self.seed()?))
    }

    /// Fine-tuning when a parent checkpoint is configured, otherwise
    /// training from scratch.
    pub fn finetune_plan(&self, variant: Variant) -> Result<ExperimentPlan> {
        let seed = self.seed()?;
        let plan = if self.train.checkpoint.is_some() {
            ExperimentPlan::finetune(variant, self.task(), seed)
        } else {
            ExperimentPlan::scratch(variant, self.task(), seed)
        };
        self.apply_overrides(plan)
    }

    pub fn incremental_plan(&self, variant: Variant, period: Period) -> Result<ExperimentPlan> {
        let plan = ExperimentPlan::incremental(variant, self.task(), period, self.seed()?);
        self.apply_overrides(plan)
    }

    pub fn mode_name(plan: &ExperimentPlan) -> &'static str {
        match plan.mode {
            RunMode::Pretrain => "pretrain",
            RunMode::Finetune => "finetune",
            RunMode::Scratch => "scratch",
            RunMode::Incremental => "incremental",
        }
    }
}

/// Fails unless `path` exists.
pub fn existing(path: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path.with_context(|| format!("missing config key `{key}`"))?;
    ensure!(p.exists(), "`{key}` = {} does not exist", p.display());
    Ok(p.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse("seed = 3\n").unwrap();
        assert_eq!(c.seed().unwrap(), 3);
        assert_eq!(c.model_config().unwrap(), ModelConfig::desk(Variant::AgentAware));
        assert_eq!(c.synth_plan().unwrap().len(), 3);
        assert_eq!(c.task(), Task::Trajectory);
        let plan = c.finetune_plan(Variant::AgentAware).unwrap();
        assert_eq!(plan.mode, RunMode::Scratch);
        assert_eq!(plan.epochs, 100);
    }

    #[test]
    fn sections_override() {
        let text = r#"
seed = 1
[model]
variant = "bert"
d_model = 16
n_heads = 2
[train]
task = "eta"
epochs = 3
checkpoint = "x.ckpt"
"#;
        let c = RunConfig::parse(text).unwrap();
        let m = c.model_config().unwrap();
        assert_eq!((m.variant, m.d_model, m.n_heads), (Variant::MultiHead, 16, 2));
        let plan = c.finetune_plan(m.variant).unwrap();
        assert_eq!((plan.mode, plan.task, plan.epochs), (RunMode::Finetune, Task::Eta, 3));
        assert_eq!(plan.batch_size, 16);
    }

    #[test]
    fn errors_name_line_and_key() {
        let err = RunConfig::parse("seed = 1\n[train]\nepochz = 3\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 3") && msg.contains("epochz"), "{msg}");
        let err = RunConfig::parse("seed = \"x\"\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 1"));
    }

    #[test]
    fn missing_seed_is_reported() {
        let c = RunConfig::parse("").unwrap();
        assert!(c.seed().is_err());
        assert!(c.pretrain_plan().is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let c = RunConfig::parse("seed = 1\n[train]\ndata_fraction = 0.0\n").unwrap();
        assert!(c.finetune_plan(Variant::AgentAware).is_err());
        let c = RunConfig::parse("[model]\nd_model = 7\n").unwrap();
        assert!(c.model_config().is_err());
        let c = RunConfig::parse("[preprocess]\nairport = \"Z\"\n").unwrap();
        assert!(c.ref_point().is_err());
    }
}
