//! Plot-ready CSV output tables.

use std::fs;
use std::path::Path;

use kanflow_core::training::{EpochRecord, FoldResult, SweepRow};

use crate::error::{CliError, Result};
use crate::num::fmt;
use crate::tables::{write_record, writer};

/// A header plus string rows, rendered as LF-terminated CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut wr = writer(Vec::new());
        write_record(&mut wr, &self.header)?;
        for r in &self.rows {
            write_record(&mut wr, r)?;
        }
        wr.into_inner().map_err(|e| CliError::input(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn metrics_table(folds: &[FoldResult]) -> Table {
    let mut t = Table::new(&["fold", "mae", "rmse", "epochs_run", "initial_mse", "final_mse"]);
    for f in folds {
        t.push(vec![
            f.fold.to_string(),
            fmt(f.metrics.mae),
            fmt(f.metrics.rmse),
            f.metrics.epochs_run.to_string(),
            fmt(f.initial_mse),
            fmt(f.final_mse),
        ]);
    }
    let col = |g: &dyn Fn(&FoldResult) -> f64| mean_std(&folds.iter().map(g).collect::<Vec<_>>());
    let stats = [
        col(&|f| f.metrics.mae),
        col(&|f| f.metrics.rmse),
        col(&|f| f.metrics.epochs_run as f64),
        col(&|f| f.initial_mse),
        col(&|f| f.final_mse),
    ];
    for (label, pick) in [("mean", 0usize), ("std", 1)] {
        let mut row = vec![label.to_string()];
        row.extend(stats.iter().map(|s| fmt(if pick == 0 { s.0 } else { s.1 })));
        t.push(row);
    }
    t
}

pub fn history_table(folds: &[(usize, &[EpochRecord])]) -> Table {
    let mut t = Table::new(&["fold", "epoch", "learning_rate", "total", "prediction", "graph"]);
    for (fold, hist) in folds {
        for r in hist.iter() {
            t.push(vec![
                fold.to_string(),
                r.epoch.to_string(),
                fmt(r.learning_rate),
                fmt(r.total),
                fmt(r.prediction),
                fmt(r.graph),
            ]);
        }
    }
    t
}

/// One row per cell. `seconds` is wall time and the only column that
/// varies between identical runs.
pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&["grid", "order", "mae", "rmse", "seconds", "accuracy", "status"]);
    for r in rows {
        let (mae, rmse, acc, status) = match &r.outcome {
            Ok(s) => (fmt(s.mae), fmt(s.rmse), fmt(-s.mae), "ok".to_string()),
            Err(e) => (String::new(), String::new(), String::new(), format!("failed: {e}")),
        };
        t.push(vec![r.grid.to_string(), r.order.to_string(), mae, rmse, fmt(r.seconds), acc, status]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use kanflow_core::training::{MetricsReport, Scores};

    #[test]
    fn lf_endings_and_17_digits() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x".into(), fmt(0.1)]);
        let s = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(s, "a,b\nx,1.0000000000000001e-1\n");
        assert!(!s.contains('\r'));
    }

    #[test]
    fn mean_std_hand_case() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn metrics_table_has_aggregate_rows() {
        let fold = |i: usize, mae: f64| FoldResult {
            fold: i,
            test: vec![i],
            metrics: MetricsReport {
                mae,
                rmse: mae * 2.0,
                train_seconds: 0.0,
                epochs_run: 3,
                history: vec![],
            },
            initial_mse: 1.0,
            final_mse: 0.5,
        };
        let t = metrics_table(&[fold(0, 1.0), fold(1, 3.0)]);
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[2][0], "mean");
        assert_eq!(t.rows[2][1], fmt(2.0));
        assert_eq!(t.rows[3][0], "std");
        assert_eq!(t.rows[3][3], fmt(0.0));
    }

    #[test]
    fn failed_sweep_cells_are_flagged() {
        let rows = [
            SweepRow {
                grid: 1,
                order: 2,
                outcome: Ok(Scores { mae: 0.5, rmse: 0.6 }),
                seconds: 1.0,
            },
            SweepRow {
                grid: 0,
                order: 2,
                outcome: Err("bad grid".into()),
                seconds: 0.0,
            },
        ];
        let t = sweep_table(&rows);
        assert_eq!(t.rows[0][5], fmt(-0.5));
        assert_eq!(t.rows[1][6], "failed: bad grid");
        assert_eq!(t.rows[1][2], "");
    }
}
