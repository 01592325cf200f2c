//! Comparison tables, loss curves and plot data.

use std::fmt::Write as _;

use mabert_core::training::{LossCurve, MetricsReport, Task};

/// Metric names and values reported for a task.
pub fn metrics_of(report: &MetricsReport) -> Vec<(&'static str, Option<f64>)> {
    match report.task {
        Task::Eta => vec![("mae_s", report.mae_s), ("rmse_s", report.rmse_s)],
        _ => vec![("he_nm", report.he_nm), ("ve_ft", report.ve_ft)],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub airport: String,
    pub application: String,
    pub metric: String,
    pub values: Vec<Option<f64>>,
}

impl ReportRow {
    /// Index of the smallest value; ties go to the earlier method.
    pub fn best(&self) -> Option<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                Some((_, b)) if b <= v => acc,
                _ => Some((i, v)),
            })
            .map(|(i, _)| i)
    }
}

/// Rows of airport x application x metric, one column per method, plus
/// the best method of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub methods: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn new(methods: Vec<String>) -> Self {
        Self {
            methods,
            rows: Vec::new(),
        }
    }

    /// Adds one row per metric of the reports' task; `reports[i]` belongs
    /// to method `i`.
    pub fn add(&mut self, airport: &str, reports: &[Option<&MetricsReport>]) {
        assert_eq!(reports.len(), self.methods.len(), "one report slot per method");
        let Some(first) = reports.iter().flatten().next() else {
            return;
        };
        for (k, (metric, _)) in metrics_of(first).into_iter().enumerate() {
            self.rows.push(ReportRow {
                airport: airport.to_string(),
                application: first.task.name().to_string(),
                metric: metric.to_string(),
                values: reports
                    .iter()
                    .map(|r| r.and_then(|r| metrics_of(r)[k].1))
                    .collect(),
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("airport,application,metric");
        for m in &self.methods {
            s.push(',');
            s.push_str(m);
        }
        s.push_str(",best\n");
        for row in &self.rows {
            let _ = write!(s, "{},{},{}", row.airport, row.application, row.metric);
            for v in &row.values {
                s.push(',');
                if let Some(v) = v {
                    let _ = write!(s, "{v}");
                }
            }
            s.push(',');
            if let Some(b) = row.best() {
                s.push_str(&self.methods[b]);
            }
            s.push('\n');
        }
        s
    }
}

/// `epoch,train_loss,val_loss`, one row per epoch.
pub fn loss_curve_csv(curve: &LossCurve) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in curve.train.iter().zip(&curve.val).enumerate() {
        let v = v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{t},{v}", i + 1);
    }
    s
}

/// Whitespace-separated `x y` rows under a `#` header line.
pub fn plot_data(x_name: &str, y_name: &str, points: &[(f64, f64)]) -> String {
    let mut s = format!("# {x_name} {y_name}\n");
    for (x, y) in points {
        let _ = writeln!(s, "{x} {y}");
    }
    s
}
