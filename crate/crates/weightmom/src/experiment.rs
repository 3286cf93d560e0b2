//! Experiment orchestration: one dense run per seed plus every
//! method × density × seed cell, each written to its own directory, followed
//! by a single-threaded summary pass.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! cells/<run_id>/run.csv                 status record
//! cells/<run_id>/metrics.csv             per-epoch metrics
//! cells/<run_id>/events.csv              per-layer prune records
//! cells/<run_id>/importance_epoch<e>.csv allocation used at each prune
//! cells/<run_id>/checkpoint.wmck         latest checkpoint (if enabled)
//! metrics.csv events.csv runs.csv summary.csv degradation.svg
//! ```

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use weightmom_core::data::Dataset;
use weightmom_core::netcore::Model;
use weightmom_core::train::{Method, Trainer};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::{Arch, ExperimentConfig};
use crate::metrics::{
    append_csv, mean_std, read_csv, write_csv, EventRow, ImportanceCsvRow, MetricRow, RunMetrics,
    RunRecord, SummaryRow, TaggedEventRow,
};
use crate::plot::degradation_svg;
use crate::{datasets, Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.wmck";
pub const MLP_HIDDEN: [usize; 2] = [256, 128];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    /// Target density; `None` for dense runs.
    pub density: Option<f64>,
    pub seed: u64,
}

impl Cell {
    pub fn dense(seed: u64) -> Self {
        Cell {
            method: Method::Dense,
            density: None,
            seed,
        }
    }

    pub fn run_id(&self) -> String {
        match self.density {
            None => format!("{}-s{}", self.method.name(), self.seed),
            Some(d) => format!("{}-d{}-s{}", self.method.name(), d, self.seed),
        }
    }

    fn from_checkpoint(ck: &Checkpoint) -> Self {
        Cell {
            method: ck.method,
            density: (ck.method != Method::Dense).then_some(ck.target_density),
            seed: ck.seed,
        }
    }
}

/// Dense baselines first (one per seed), then density × method × seed.
pub fn plan_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells: Vec<Cell> = cfg.seeds.iter().map(|&s| Cell::dense(s)).collect();
    for &density in &cfg.densities {
        for &method in cfg.methods.iter().filter(|m| **m != Method::Dense) {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    method,
                    density: Some(density),
                    seed,
                });
            }
        }
    }
    cells
}

pub fn build_model(arch: Arch, data: &Dataset, seed: u64) -> Result<Model> {
    let input = data.sample_shape().to_vec();
    let classes = data.num_classes();
    Ok(match arch {
        Arch::Mlp => Model::mlp(input, &MLP_HIDDEN, classes, seed)?,
        Arch::SmallConv => Model::smallconv(input, classes, seed)?,
    })
}

pub fn cell_dir(out: &Path, run_id: &str) -> PathBuf {
    out.join("cells").join(run_id)
}

/// Runs one cell, writing its files under `out`. Failures are recorded in
/// the cell's `run.csv` and returned as a failed record rather than an error.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    train: &Dataset,
    test: &Dataset,
    out: &Path,
    resume: Option<Checkpoint>,
) -> Result<RunRecord> {
    let dir = cell_dir(out, &cell.run_id());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        train_cell(cfg, cell, train, test, &dir, resume)
    }))
    .unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Error::Config(format!("cell panicked: {msg}")))
    });
    let mut record = RunRecord {
        run_id: cell.run_id(),
        method: cell.method.name().to_string(),
        density: cell.density,
        seed: cell.seed,
        status: "ok".into(),
        epochs: 0,
        final_test_acc: None,
        final_density: None,
        error: String::new(),
    };
    match outcome {
        Ok(last) => {
            record.epochs = last.epoch + 1;
            record.final_test_acc = Some(last.test_acc);
            record.final_density = Some(last.global_density);
        }
        Err(e) => {
            record.status = "failed".into();
            record.error = e.to_string();
        }
    }
    write_csv(&dir.join("run.csv"), std::slice::from_ref(&record))?;
    Ok(record)
}

fn keep_prefix<T: serde::Serialize + serde::de::DeserializeOwned>(
    path: &Path,
    keep: impl Fn(&T) -> bool,
) -> Result<()> {
    let rows: Vec<T> = if path.exists() {
        read_csv(path)?
    } else {
        Vec::new()
    };
    let kept: Vec<T> = rows.into_iter().filter(|r| keep(r)).collect();
    if kept.is_empty() {
        if path.exists() {
            std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    } else {
        write_csv(path, &kept)
    }
}

fn train_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    train: &Dataset,
    test: &Dataset,
    dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<MetricRow> {
    let run_id = cell.run_id();
    let method = cell.method.name();
    let tc = cfg.cell_config(cell.method, cell.density.unwrap_or(1.0), cell.seed);
    let metrics_path = dir.join("metrics.csv");
    let events_path = dir.join("events.csv");

    let mut trainer = match resume {
        Some(ck) => {
            if Cell::from_checkpoint(&ck) != *cell {
                return Err(Error::Checkpoint(format!(
                    "checkpoint belongs to {}, not {run_id}",
                    Cell::from_checkpoint(&ck).run_id()
                )));
            }
            let next = ck.state.next_epoch;
            keep_prefix::<MetricRow>(&metrics_path, |r| r.epoch < next)?;
            keep_prefix::<EventRow>(&events_path, |r| r.epoch < next)?;
            Trainer::resume(tc, ck.state, train, test)?
        }
        None => {
            for p in [&metrics_path, &events_path] {
                if p.exists() {
                    std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
                }
            }
            let model = build_model(cfg.arch, train, cell.seed)?;
            Trainer::new(tc, model, train, test)?
        }
    };

    let every = cfg.checkpoint_every;
    let epochs = trainer.config().epochs;
    let mut last: Option<MetricRow> = None;
    let mut observe = |rec: &weightmom_core::train::EpochRecord,
                       state: &weightmom_core::train::TrainerState| {
        let row = MetricRow::from_record(&run_id, cell.seed, method, rec);
        append_csv(&metrics_path, std::slice::from_ref(&row))?;
        if let Some(ev) = &rec.event {
            append_csv(&events_path, &EventRow::from_event(ev))?;
        }
        if let Some(table) = &rec.table {
            let rows = ImportanceCsvRow::from_table(&state.model, table);
            write_csv(
                &dir.join(format!("importance_epoch{}.csv", rec.epoch)),
                &rows,
            )?;
        }
        if every > 0 && (state.next_epoch.is_multiple_of(every) || state.next_epoch == epochs) {
            let ck = Checkpoint {
                method: cell.method,
                seed: cell.seed,
                target_density: cell.density.unwrap_or(1.0),
                state: state.clone(),
            };
            write_checkpoint(&ck, &dir.join(CHECKPOINT_FILE))?;
        }
        last = Some(row);
        Ok::<(), Error>(())
    };
    while !trainer.is_finished() {
        let rec = trainer.run_epoch()?;
        observe(&rec, trainer.state())?;
    }
    match last {
        Some(row) => Ok(row),
        None => {
            let rows: Vec<MetricRow> = read_csv(&metrics_path)?;
            rows.last()
                .cloned()
                .ok_or_else(|| Error::Config("run finished without any epochs".into()))
        }
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every planned cell in parallel, then summarizes the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let (train, test) = datasets::load_for(cfg)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cells = plan_cells(cfg);
    let pool = thread_pool(cfg.threads)?;
    let records: Vec<Result<RunRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cfg, cell, &train, &test, out, None))
            .collect()
    });
    for r in records {
        r?;
    }
    summarize(out)
}

/// Continues the cell a checkpoint belongs to, then re-summarizes.
pub fn resume_experiment(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<(RunRecord, Summary)> {
    cfg.validate()?;
    let ck = read_checkpoint(checkpoint)?;
    let cell = Cell::from_checkpoint(&ck);
    let (train, test) = datasets::load_for(cfg)?;
    let out = &cfg.output_dir;
    let record = run_cell(cfg, &cell, &train, &test, out, Some(ck))?;
    Ok((record, summarize(out)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: Vec<RunRecord>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, method: &str, density: Option<f64>) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.density == density)
    }
}

fn method_rank(name: &str) -> usize {
    [
        Method::Dense,
        Method::WeightMom,
        Method::OneShot,
        Method::Random,
    ]
    .iter()
    .position(|m| m.name() == name)
    .unwrap_or(usize::MAX)
}

/// Collects every cell under `dir` into the experiment-level CSVs, the
/// summary table and the degradation plot.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let cells = dir.join("cells");
    let mut cell_dirs: Vec<PathBuf> = std::fs::read_dir(&cells)
        .map_err(|e| Error::io(&cells, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("run.csv").is_file())
        .collect();
    cell_dirs.sort();

    let mut runs = Vec::new();
    let mut metrics = Vec::new();
    let mut events = Vec::new();
    for cd in &cell_dirs {
        let rec: Vec<RunRecord> = read_csv(&cd.join("run.csv"))?;
        let rec = rec
            .into_iter()
            .next()
            .ok_or_else(|| Error::format(cd.join("run.csv"), "empty run record"))?;
        if rec.is_ok() {
            let rows: Vec<MetricRow> = read_csv(&cd.join("metrics.csv"))?;
            let ev = cd.join("events.csv");
            if ev.exists() {
                let rows: Vec<EventRow> = read_csv(&ev)?;
                events.extend(rows.iter().map(|e| TaggedEventRow::new(&rec.run_id, e)));
            }
            metrics.extend(rows);
        }
        runs.push(rec);
    }

    let final_acc: BTreeMap<String, f64> = RunMetrics::group(metrics.clone())
        .into_iter()
        .filter_map(|r| r.final_row().map(|f| (r.run_id.clone(), f.test_acc)))
        .collect();

    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for r in &runs {
        let k = (r.method.clone(), r.density);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort_by(|a, b| {
        method_rank(&a.0)
            .cmp(&method_rank(&b.0))
            .then(a.0.cmp(&b.0))
            .then(b.1.unwrap_or(1.0).total_cmp(&a.1.unwrap_or(1.0)))
    });

    let mut rows = Vec::new();
    for (method, density) in keys {
        let group: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.method == method && r.density == density)
            .collect();
        let accs: Vec<f64> = group
            .iter()
            .filter_map(|r| final_acc.get(&r.run_id).copied())
            .collect();
        let dens: Vec<f64> = group
            .iter()
            .filter(|r| r.is_ok())
            .filter_map(|r| r.final_density)
            .collect();
        let ms = mean_std(&accs);
        rows.push(SummaryRow {
            method,
            density,
            n: accs.len(),
            failed: group.len() - accs.len(),
            mean_test_acc: ms.map(|m| m.0),
            std_test_acc: ms.map(|m| m.1),
            mean_final_density: mean_std(&dens).map(|m| m.0),
            degradation: None,
        });
    }
    let dense_mean = rows
        .iter()
        .find(|r| r.method == Method::Dense.name())
        .and_then(|r| r.mean_test_acc);
    for r in &mut rows {
        if let (Some(d), Some(m)) = (dense_mean, r.mean_test_acc) {
            r.degradation = Some(d - m);
        }
    }

    write_csv(&dir.join("metrics.csv"), &metrics)?;
    write_csv(&dir.join("events.csv"), &events)?;
    write_csv(&dir.join("runs.csv"), &runs)?;
    write_csv(&dir.join("summary.csv"), &rows)?;
    let plotted: Vec<SummaryRow> = rows
        .iter()
        .filter(|r| r.method != Method::Dense.name())
        .cloned()
        .collect();
    let svg = degradation_svg(&plotted, "Test accuracy degradation vs density");
    let svg_path = dir.join("degradation.svg");
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok(Summary { runs, rows })
}
