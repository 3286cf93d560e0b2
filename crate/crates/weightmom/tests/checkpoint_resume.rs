use std::path::Path;

use proptest::prelude::*;
use weightmom::checkpoint::{decode, encode, read_checkpoint, write_checkpoint, Checkpoint};
use weightmom::config::ExperimentConfig;
use weightmom::datasets::synthetic_splits;
use weightmom::experiment::{cell_dir, run_cell, Cell, CHECKPOINT_FILE};
use weightmom::metrics::{read_csv, EventRow, MetricRow};
use weightmom_core::magtrack::{MagnitudeHistory, MomentumMode};
use weightmom_core::netcore::{AdamConfig, Model, OptimizerState};
use weightmom_core::pruner::{MaskSet, SparsityMask};
use weightmom_core::train::{Method, TrainerState};

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "data.dataset = synthetic\noutput.dir = {}\n{extra}",
        dir.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn cell_for(method: Method) -> Cell {
    Cell {
        method,
        density: Some(0.1),
        seed: 2,
    }
}

#[test]
fn trained_state_round_trips_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "train.epochs = 22\ncheckpoint.every = 22\n");
    let (train, test) = synthetic_splits(1000, 0);
    let rec = run_cell(
        &cfg,
        &cell_for(Method::WeightMom),
        &train,
        &test,
        dir.path(),
        None,
    )
    .unwrap();
    assert!(rec.is_ok(), "{rec:?}");
    let path = cell_dir(dir.path(), &rec.run_id).join(CHECKPOINT_FILE);
    let ck = read_checkpoint(&path).unwrap();
    assert_eq!(ck.state.next_epoch, 22);
    assert!(ck.state.masks.global_density() < 1.0);

    let bytes = encode(&ck);
    let back = decode(&bytes).unwrap();
    assert_eq!(back, ck);
    for ((w0, b0), (w1, b1)) in ck.state.model.params().zip(back.state.model.params()) {
        let bits =
            |t: &weightmom_core::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(w0), bits(w1));
        assert_eq!(bits(b0), bits(b1));
    }
    assert_eq!(encode(&back), bytes);

    let mut corrupt = bytes.clone();
    let mid = bytes.len() / 2;
    corrupt[mid] ^= 0x40;
    let err = decode(&corrupt).unwrap_err().to_string();
    assert!(err.contains("checksum"), "{err}");

    let err = decode(&bytes[..bytes.len() / 2]).unwrap_err().to_string();
    assert!(
        err.contains("checksum") || err.contains("truncated"),
        "{err}"
    );
}

fn resume_matches(method: Method) {
    let full_dir = tempfile::tempdir().unwrap();
    let part_dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic_splits(1000, 0);
    let s = cell_for(method);

    let full = config(full_dir.path(), "train.epochs = 30\n");
    run_cell(&full, &s, &train, &test, full_dir.path(), None).unwrap();

    let first = config(
        part_dir.path(),
        "train.epochs = 20\ncheckpoint.every = 10\n",
    );
    run_cell(&first, &s, &train, &test, part_dir.path(), None).unwrap();
    let cd = cell_dir(part_dir.path(), &s.run_id());
    let ck = read_checkpoint(&cd.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.state.next_epoch, 20);
    let rest = config(part_dir.path(), "train.epochs = 30\n");
    let rec = run_cell(&rest, &s, &train, &test, part_dir.path(), Some(ck)).unwrap();
    assert!(rec.is_ok(), "{rec:?}");

    let a: Vec<MetricRow> =
        read_csv(&cell_dir(full_dir.path(), &s.run_id()).join("metrics.csv")).unwrap();
    let b: Vec<MetricRow> = read_csv(&cd.join("metrics.csv")).unwrap();
    assert_eq!(a.len(), 30);
    assert_eq!(a, b);
    assert_eq!(a[29].test_acc.to_bits(), b[29].test_acc.to_bits());
    assert_eq!(a[29].train_loss.to_bits(), b[29].train_loss.to_bits());

    if method == Method::WeightMom {
        let ea: Vec<EventRow> =
            read_csv(&cell_dir(full_dir.path(), &s.run_id()).join("events.csv")).unwrap();
        let eb: Vec<EventRow> = read_csv(&cd.join("events.csv")).unwrap();
        assert_eq!(ea, eb);
    }
}

#[test]
fn resume_at_epoch_20_matches_uninterrupted_weightmom() {
    resume_matches(Method::WeightMom);
}

#[test]
fn resume_at_epoch_20_matches_uninterrupted_random() {
    resume_matches(Method::Random);
}

#[test]
fn resume_rejects_foreign_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "train.epochs = 2\ncheckpoint.every = 1\n");
    let (train, test) = synthetic_splits(200, 0);
    let s = cell_for(Method::OneShot);
    run_cell(&cfg, &s, &train, &test, dir.path(), None).unwrap();
    let ck = read_checkpoint(&cell_dir(dir.path(), &s.run_id()).join(CHECKPOINT_FILE)).unwrap();
    let rec = run_cell(
        &cfg,
        &cell_for(Method::Random),
        &train,
        &test,
        dir.path(),
        Some(ck),
    )
    .unwrap();
    assert!(!rec.is_ok());
    assert!(rec.error.contains("belongs to"), "{}", rec.error);
}

#[test]
fn write_is_atomic_replacement() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::mlp(vec![3], &[4], 2, 1).unwrap();
    let ck = Checkpoint {
        method: Method::Dense,
        seed: 1,
        target_density: 1.0,
        state: TrainerState {
            masks: MaskSet::for_model(&model),
            history: None,
            optimizer: OptimizerState::new(AdamConfig::default(), &model),
            next_epoch: 0,
            model,
        },
    };
    let path = dir.path().join("c.wmck");
    write_checkpoint(&ck, &path).unwrap();
    write_checkpoint(&ck, &path).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), ck);
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn arbitrary_states_round_trip(
        inputs in 1usize..6,
        hidden in 1usize..9,
        classes in 2usize..4,
        seed in any::<u64>(),
        prune_every in 2usize..7,
        window in 1usize..5,
        epochs in 0usize..7,
        ema in any::<bool>(),
        step in any::<u64>(),
    ) {
        let mut model = Model::mlp(vec![inputs], &[hidden], classes, seed).unwrap();
        let masks: Vec<SparsityMask> = model
            .prunable_sizes()
            .iter()
            .map(|&n| {
                let mut m = SparsityMask::ones(n);
                for i in (0..n).step_by(prune_every) {
                    m.prune(i);
                }
                m
            })
            .collect();
        let masks = MaskSet::from_masks(masks);
        masks.apply(&mut model).unwrap();
        let mode = if ema { MomentumMode::Ema { coefficient: 0.9 } } else { MomentumMode::Window };
        let mut history = MagnitudeHistory::for_model(window, &model, mode).unwrap();
        for _ in 0..epochs {
            history.record_epoch(&model).unwrap();
        }
        let mut optimizer = OptimizerState::new(AdamConfig::default(), &model);
        optimizer.step = step;
        for (i, m) in optimizer.moments.iter_mut().enumerate() {
            for (j, v) in m.m_weight.iter_mut().enumerate() {
                *v = ((i * 31 + j) as f64).sin();
            }
        }
        let ck = Checkpoint {
            method: Method::WeightMom,
            seed,
            target_density: 0.05,
            state: TrainerState { model, masks, history: Some(history), optimizer, next_epoch: epochs },
        };
        let bytes = encode(&ck);
        prop_assert_eq!(&decode(&bytes).unwrap(), &ck);
        prop_assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }
}
