use std::path::Path;
use std::time::Instant;

use weightmom::config::ExperimentConfig;
use weightmom::datasets::synthetic_splits;
use weightmom::experiment::{plan_cells, run_experiment};
use weightmom::metrics::{read_csv, MetricRow, RunMetrics, RunRecord, SummaryRow};
use weightmom_core::data::Dataset;

fn config(dir: &Path) -> ExperimentConfig {
    let text = format!("data.dataset = synthetic\noutput.dir = {}\n", dir.display());
    ExperimentConfig::parse(&text).unwrap()
}

/// Plain gradient-descent logistic regression on the raw features.
fn logistic_oracle(train: &Dataset, test: &Dataset) -> f64 {
    let dim = train.sample_len();
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    for _ in 0..200 {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for i in 0..train.len() {
            let x = train.sample(i);
            let z: f64 = b + x.iter().zip(&w).map(|(a, c)| *a as f64 * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - train.labels()[i] as f64;
            for (g, a) in gw.iter_mut().zip(x) {
                *g += err * *a as f64;
            }
            gb += err;
        }
        let n = train.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.5 * g / n;
        }
        b -= 0.5 * gb / n;
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let z: f64 = b + test
                .sample(i)
                .iter()
                .zip(&w)
                .map(|(a, c)| *a as f64 * c)
                .sum::<f64>();
            (z > 0.0) == (test.labels()[i] == 1)
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn synthetic_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let (train, test) = synthetic_splits(cfg.synthetic_samples, cfg.data_seed);
    assert_eq!(train.len() + test.len(), 1000);
    let oracle = logistic_oracle(&train, &test);
    assert!(
        oracle > 0.95,
        "toy problem should be linearly separable, oracle {oracle}"
    );

    let start = Instant::now();
    let summary = run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "pipeline took {elapsed:.1} s");
    assert_eq!(summary.runs.len(), plan_cells(&cfg).len());
    assert!(summary.runs.iter().all(RunRecord::is_ok));

    let dense = summary.row("dense", None).unwrap();
    assert_eq!(dense.n, 3);
    assert!(dense.mean_test_acc.unwrap() > 0.95, "{dense:?}");

    // Every metrics row parses back and each run satisfies its invariants.
    let rows: Vec<MetricRow> = read_csv(&dir.path().join("metrics.csv")).unwrap();
    let runs = RunMetrics::group(rows);
    assert_eq!(runs.len(), summary.runs.len());
    for r in &runs {
        r.validate().unwrap();
        assert_eq!(r.rows.len(), cfg.train.epochs);
    }

    // Summary means equal the mean of final-epoch metrics rows.
    let table: Vec<SummaryRow> = read_csv(&dir.path().join("summary.csv")).unwrap();
    for row in &table {
        let finals: Vec<f64> = summary
            .runs
            .iter()
            .filter(|r| r.method == row.method && r.density == row.density)
            .map(|rec| {
                runs.iter()
                    .find(|r| r.run_id == rec.run_id)
                    .unwrap()
                    .final_row()
                    .unwrap()
                    .test_acc
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        assert!((row.mean_test_acc.unwrap() - mean).abs() <= 1e-9, "{row:?}");
    }
    assert!(dir.path().join("degradation.svg").is_file());
}
