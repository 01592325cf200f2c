//! Run log records and their `key=value` line format.
//!
//! One record per line: `event=<name>` followed by space-separated
//! `key=value` pairs. Values never contain spaces; lists are
//! comma-separated. Example:
//!
//! ```text
//! event=epoch stage=pretrain epoch=3 train_loss=0.41 val_loss=0.52
//! event=eval period=2019-01 scenes=1546300800,1546301400
//! ```

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{MetricsReport, Task};

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Start {
        stage: String,
        task: Task,
        seed: u64,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        parameters: usize,
        train_scenes: usize,
    },
    Epoch {
        stage: String,
        epoch: usize,
        train_loss: f64,
        val_loss: Option<f64>,
    },
    /// Scenes (by window start) evaluated before any update on them.
    Eval { period: String, scenes: Vec<i64> },
    /// Scenes about to be trained on.
    Train { period: String, scenes: Vec<i64> },
    Metrics { stage: String, report: MetricsReport },
}

/// Receives log records as a run progresses.
pub trait RunObserver {
    fn record(&mut self, record: LogRecord);
}

impl RunObserver for Vec<LogRecord> {
    fn record(&mut self, record: LogRecord) {
        self.push(record);
    }
}

/// Discards everything.
impl RunObserver for () {
    fn record(&mut self, _: LogRecord) {}
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x}"))
}

fn ids(v: &[i64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogRecord::Start {
                stage,
                task,
                seed,
                epochs,
                lr,
                batch_size,
                parameters,
                train_scenes,
            } => write!(
                f,
                "event=start stage={stage} task={} seed={seed} epochs={epochs} lr={lr} \
                 batch_size={batch_size} parameters={parameters} train_scenes={train_scenes}",
                task.name()
            ),
            LogRecord::Epoch {
                stage,
                epoch,
                train_loss,
                val_loss,
            } => write!(
                f,
                "event=epoch stage={stage} epoch={epoch} train_loss={train_loss} val_loss={}",
                opt(*val_loss)
            ),
            LogRecord::Eval { period, scenes } => {
                write!(f, "event=eval period={period} scenes={}", ids(scenes))
            }
            LogRecord::Train { period, scenes } => {
                write!(f, "event=train period={period} scenes={}", ids(scenes))
            }
            LogRecord::Metrics { stage, report } => write!(
                f,
                "event=metrics stage={stage} task={} he_nm={} ve_ft={} mae_s={} rmse_s={} mse={} n_samples={}",
                report.task.name(),
                opt(report.he_nm),
                opt(report.ve_ft),
                opt(report.mae_s),
                opt(report.rmse_s),
                report.mse,
                report.n_samples
            ),
        }
    }
}

/// Splits a log line into its `key=value` pairs; `None` when a token has
/// no `=`.
pub fn parse_log_line(line: &str) -> Option<Vec<(&str, &str)>> {
    line.split_whitespace().map(|tok| tok.split_once('=')).collect()
}

/// Lists every training record that includes a scene not evaluated by an
/// earlier `eval` record. Empty means the prequential order held.
pub fn prequential_violations<'a>(lines: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut evaluated = BTreeSet::new();
    let mut out = Vec::new();
    for (no, line) in lines.into_iter().enumerate() {
        let Some(pairs) = parse_log_line(line) else {
            continue;
        };
        let get = |k: &str| pairs.iter().find(|(key, _)| *key == k).map(|(_, v)| *v);
        let scenes = get("scenes")
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty());
        match get("event") {
            Some("eval") => evaluated.extend(scenes.map(String::from)),
            Some("train") => {
                for s in scenes {
                    if !evaluated.contains(s) {
                        out.push(format!("line {}: scene {s} trained before evaluation", no + 1));
                    }
                }
            }
            _ => {}
        }
    }
    out
}
