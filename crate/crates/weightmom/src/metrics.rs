//! CSV records written per run and per experiment.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use weightmom_core::allocate::ImportanceTable;
use weightmom_core::netcore::Model;
use weightmom_core::pruner::PruneEvent;
use weightmom_core::train::EpochRecord;

use crate::{Error, Result};

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub global_density: f64,
}

impl MetricRow {
    pub fn from_record(run_id: &str, seed: u64, method: &str, rec: &EpochRecord) -> Self {
        MetricRow {
            run_id: run_id.to_string(),
            seed,
            method: method.to_string(),
            epoch: rec.epoch,
            lr: rec.lr,
            train_loss: rec.train_loss,
            test_acc: rec.test_acc,
            global_density: rec.global_density,
        }
    }
}

/// Per-epoch history of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub rows: Vec<MetricRow>,
}

impl RunMetrics {
    /// Groups rows by run id, keeping first-seen order.
    pub fn group(rows: Vec<MetricRow>) -> Vec<RunMetrics> {
        let mut runs: Vec<RunMetrics> = Vec::new();
        for row in rows {
            match runs.iter_mut().find(|r| r.run_id == row.run_id) {
                Some(r) => r.rows.push(row),
                None => runs.push(RunMetrics {
                    run_id: row.run_id.clone(),
                    seed: row.seed,
                    method: row.method.clone(),
                    rows: vec![row],
                }),
            }
        }
        runs
    }

    pub fn final_row(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// Epochs run 0, 1, 2, ...; density never rises; accuracy stays in [0, 1].
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.run_id != self.run_id || r.seed != self.seed || r.method != self.method {
                return Err(format!("row {i} belongs to another run"));
            }
            if r.epoch != i {
                return Err(format!("epoch {} found where {i} was expected", r.epoch));
            }
            if !(0.0..=1.0).contains(&r.test_acc) {
                return Err(format!("epoch {i}: accuracy {} outside [0, 1]", r.test_acc));
            }
            if i > 0 && r.global_density > self.rows[i - 1].global_density {
                return Err(format!("epoch {i}: density rose"));
            }
        }
        Ok(())
    }
}

/// One `events.csv` row: a layer's share of a pruning event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub epoch: usize,
    pub density_before: f64,
    pub density_after: f64,
    pub layer: usize,
    pub tau: f64,
    pub pruned: usize,
    pub shortfall: usize,
}

impl EventRow {
    pub fn from_event(ev: &PruneEvent) -> Vec<EventRow> {
        ev.layers
            .iter()
            .map(|l| EventRow {
                epoch: ev.epoch,
                density_before: ev.density_before,
                density_after: ev.density_after,
                layer: l.position,
                tau: l.tau,
                pruned: l.pruned,
                shortfall: l.shortfall,
            })
            .collect()
    }
}

/// Experiment-level event row tagged with its run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedEventRow {
    pub run_id: String,
    pub epoch: usize,
    pub density_before: f64,
    pub density_after: f64,
    pub layer: usize,
    pub tau: f64,
    pub pruned: usize,
    pub shortfall: usize,
}

impl TaggedEventRow {
    pub fn new(run_id: &str, e: &EventRow) -> Self {
        TaggedEventRow {
            run_id: run_id.to_string(),
            epoch: e.epoch,
            density_before: e.density_before,
            density_after: e.density_after,
            layer: e.layer,
            tau: e.tau,
            pruned: e.pruned,
            shortfall: e.shortfall,
        }
    }
}

/// One row of a per-step importance dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceCsvRow {
    pub layer: String,
    pub l: usize,
    #[serde(rename = "W_l")]
    pub w_l: usize,
    #[serde(rename = "I_l")]
    pub i_l: f64,
    pub k_l: f64,
}

impl ImportanceCsvRow {
    pub fn from_table(model: &Model, table: &ImportanceTable) -> Vec<ImportanceCsvRow> {
        model
            .prunable()
            .zip(&table.rows)
            .map(|(layer, row)| ImportanceCsvRow {
                layer: format!("layer{}.{}", layer.index, layer.kind.name()),
                l: row.position,
                w_l: row.params,
                i_l: row.importance,
                k_l: row.keep_fraction,
            })
            .collect()
    }
}

/// Status line for one run in `run.csv` / `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub method: String,
    /// Target density; empty for dense runs.
    pub density: Option<f64>,
    pub seed: u64,
    /// `ok` or `failed`.
    pub status: String,
    pub epochs: usize,
    pub final_test_acc: Option<f64>,
    pub final_density: Option<f64>,
    pub error: String,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// One `summary.csv` row: a method at one density over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub density: Option<f64>,
    /// Completed runs contributing to the means.
    pub n: usize,
    /// Runs that failed or are missing.
    pub failed: usize,
    pub mean_test_acc: Option<f64>,
    pub std_test_acc: Option<f64>,
    pub mean_final_density: Option<f64>,
    /// Dense mean accuracy minus this cell's mean accuracy.
    pub degradation: Option<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_n_minus_one() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), Some((0.5, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn metrics_header_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let row = MetricRow {
            run_id: "a".into(),
            seed: 1,
            method: "dense".into(),
            epoch: 0,
            lr: 0.05,
            train_loss: 0.5,
            test_acc: 0.9,
            global_density: 1.0,
        };
        write_csv(&p, std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "run_id,seed,method,epoch,lr,train_loss,test_acc,global_density"
        );
        append_csv(&p, std::slice::from_ref(&row)).unwrap();
        let back: Vec<MetricRow> = read_csv(&p).unwrap();
        assert_eq!(back, vec![row.clone(), row]);
    }

    #[test]
    fn validate_flags_density_increase_and_gaps() {
        let mk = |epoch, d| MetricRow {
            run_id: "r".into(),
            seed: 1,
            method: "weightmom".into(),
            epoch,
            lr: 0.05,
            train_loss: 1.0,
            test_acc: 0.5,
            global_density: d,
        };
        let ok = RunMetrics::group(vec![mk(0, 1.0), mk(1, 0.5)]);
        assert!(ok[0].validate().is_ok());
        let up = RunMetrics::group(vec![mk(0, 0.5), mk(1, 1.0)]);
        assert!(up[0].validate().is_err());
        let gap = RunMetrics::group(vec![mk(0, 1.0), mk(2, 1.0)]);
        assert!(gap[0].validate().is_err());
    }
}
