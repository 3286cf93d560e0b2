//! The prune-train loop.
//!
//! A [`Trainer`] owns one run: model, masks, magnitude history and
//! optimizer. Each call to [`Trainer::run_epoch`] performs the scheduled
//! prune step (if any), one shuffled pass of Adam over the training set,
//! the epoch-end magnitude recording and a test evaluation. Between epochs
//! the full state can be taken out and restored, which is how checkpoints
//! resume bit-exactly: shuffling is derived from `(seed, epoch)` only.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::allocate::{
    layer_keep_fractions, layer_stats, AllocConfig, ImportanceTable, LayerStats,
};
use crate::data::Dataset;
use crate::magtrack::{MagnitudeHistory, MomentumMode, PersistenceConfig};
use crate::netcore::{softmax_cross_entropy, AdamConfig, Model, OptimizerState};
use crate::pruner::{
    baseline_prune, prune_step, BaselineStrategy, MaskSet, PruneConfig, PruneEvent, PruneSchedule,
};
use crate::{seeded_rng, Error, Result};

const SHUFFLE_STREAM: u64 = 0x100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// No pruning; the reference accuracy.
    Dense,
    /// Momentum-scored, persistence-gated gradual pruning.
    WeightMom,
    /// Single magnitude prune at the baseline epoch.
    OneShot,
    /// Single random prune at the baseline epoch.
    Random,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::WeightMom => "weightmom",
            Method::OneShot => "oneshot",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dense" => Some(Method::Dense),
            "weightmom" => Some(Method::WeightMom),
            "oneshot" | "oneshot_magnitude" => Some(Method::OneShot),
            "random" => Some(Method::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub window: usize,
    pub momentum: MomentumMode,
    pub prune: PruneConfig,
    pub alloc: AllocConfig,
    pub schedule: PruneSchedule,
    /// Epoch at which the one-shot and random baselines prune.
    pub baseline_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let schedule = PruneSchedule::default();
        Self {
            method: Method::WeightMom,
            seed: 1,
            epochs: 60,
            batch_size: 128,
            adam: AdamConfig::default(),
            window: crate::magtrack::DEFAULT_WINDOW,
            momentum: MomentumMode::Window,
            prune: PruneConfig::default(),
            alloc: AllocConfig::default(),
            schedule,
            baseline_epoch: schedule.final_epoch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        PersistenceConfig::new(self.window, self.prune.persistence)?;
        if self.method == Method::WeightMom {
            self.schedule.validate(self.window)?;
        }
        if !(self.schedule.target_density > 0.0 && self.schedule.target_density <= 1.0) {
            return Err(Error::Config(alloc::format!(
                "target density {} must lie in (0, 1]",
                self.schedule.target_density
            )));
        }
        Ok(())
    }
}

/// Everything that evolves during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub model: Model,
    pub masks: MaskSet,
    pub history: Option<MagnitudeHistory>,
    pub optimizer: OptimizerState,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub global_density: f64,
    pub event: Option<PruneEvent>,
    /// Per-layer allocation used by this epoch's prune, if one happened.
    pub table: Option<ImportanceTable>,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    stats: Vec<LayerStats>,
    state: TrainerState,
    train: &'a Dataset,
    test: &'a Dataset,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        model: Model,
        train: &'a Dataset,
        test: &'a Dataset,
    ) -> Result<Self> {
        let masks = MaskSet::for_model(&model);
        let history = match config.method {
            Method::WeightMom => Some(MagnitudeHistory::for_model(
                config.window,
                &model,
                config.momentum,
            )?),
            _ => None,
        };
        let optimizer = OptimizerState::new(config.adam, &model);
        Self::resume(
            config,
            TrainerState {
                model,
                masks,
                history,
                optimizer,
                next_epoch: 0,
            },
            train,
            test,
        )
    }

    /// Continues a run from a saved state.
    pub fn resume(
        config: TrainConfig,
        state: TrainerState,
        train: &'a Dataset,
        test: &'a Dataset,
    ) -> Result<Self> {
        config.validate()?;
        let model = &state.model;
        for (name, d) in [("training", train), ("test", test)] {
            if d.sample_shape() != model.input_shape() {
                return Err(Error::shape(
                    alloc::format!("{name} samples"),
                    model.input_shape(),
                    d.sample_shape(),
                ));
            }
            if d.num_classes() != model.num_classes() {
                return Err(Error::shape(
                    alloc::format!("{name} classes"),
                    model.num_classes(),
                    d.num_classes(),
                ));
            }
            if d.is_empty() {
                return Err(Error::Config(alloc::format!("{name} set is empty")));
            }
        }
        state.masks.check(model)?;
        if state.history.is_some() != (config.method == Method::WeightMom) {
            return Err(Error::Structural(
                "magnitude history presence does not match the method".into(),
            ));
        }
        let stats = layer_stats(&model.prunable_sizes())?;
        Ok(Self {
            config,
            stats,
            state,
            train,
            test,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn next_epoch(&self) -> usize {
        self.state.next_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.state.next_epoch >= self.config.epochs
    }

    fn prune_if_scheduled(
        &mut self,
        epoch: usize,
    ) -> Result<(Option<PruneEvent>, Option<ImportanceTable>)> {
        let cfg = &self.config;
        let st = &mut self.state;
        match cfg.method {
            Method::Dense => Ok((None, None)),
            Method::WeightMom => {
                if !cfg.schedule.is_prune_epoch(epoch) {
                    return Ok((None, None));
                }
                let target = cfg.schedule.density_at(epoch);
                let table = layer_keep_fractions(&self.stats, target, &cfg.alloc)?;
                let history = st.history.as_ref().expect("weightmom keeps a history");
                let event = prune_step(
                    &mut st.model,
                    &mut st.masks,
                    history,
                    &table,
                    &cfg.prune,
                    epoch,
                )?;
                Ok((Some(event), Some(table)))
            }
            Method::OneShot | Method::Random => {
                if epoch != cfg.baseline_epoch {
                    return Ok((None, None));
                }
                let strategy = if cfg.method == Method::OneShot {
                    BaselineStrategy::OneShotMagnitude
                } else {
                    BaselineStrategy::Random
                };
                let table =
                    layer_keep_fractions(&self.stats, cfg.schedule.target_density, &cfg.alloc)?;
                let before = st.masks.global_density();
                let fresh = baseline_prune(&st.model, strategy, &table, cfg.seed)?;
                st.masks.intersect(&fresh)?;
                st.masks.apply(&mut st.model)?;
                let event = PruneEvent {
                    epoch,
                    density_before: before,
                    density_after: st.masks.global_density(),
                    layers: table
                        .rows
                        .iter()
                        .zip(st.masks.masks())
                        .map(|(row, m)| crate::pruner::LayerPruneRecord {
                            position: row.position,
                            tau: 0.0,
                            kept_before: row.params,
                            quota: row.quota,
                            pruned: row.params - m.count_ones(),
                            shortfall: 0,
                        })
                        .collect(),
                };
                Ok((Some(event), Some(table)))
            }
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.next_epoch;
        if epoch >= self.config.epochs {
            return Err(Error::Usage(alloc::format!(
                "run already finished after {} epochs",
                self.config.epochs
            )));
        }
        let (event, table) = self.prune_if_scheduled(epoch)?;

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut seeded_rng(
            self.config.seed,
            SHUFFLE_STREAM + epoch as u64,
        ));
        let mut loss_sum = 0.0;
        let st = &mut self.state;
        for chunk in order.chunks(self.config.batch_size) {
            let (x, y) = self.train.batch(chunk);
            let (logits, cache) = st.model.forward(&x)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            let mut grads = st.model.backward(&cache, &dlogits)?;
            st.masks.mask_gradients(&mut grads);
            st.optimizer
                .step(&mut st.model, &grads, epoch, Some(&st.masks))?;
            loss_sum += loss * chunk.len() as f64;
        }
        if let Some(h) = st.history.as_mut() {
            h.record_epoch(&st.model)?;
        }
        st.next_epoch += 1;
        let test_acc = evaluate(&st.model, self.test, self.config.batch_size)?;
        Ok(EpochRecord {
            epoch,
            lr: st.optimizer.lr_at_epoch(epoch),
            train_loss: loss_sum / self.train.len() as f64,
            test_acc,
            global_density: st.masks.global_density(),
            event,
            table,
        })
    }

    /// Runs the remaining epochs, handing each record to `observe`.
    pub fn run<F>(&mut self, mut observe: F) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&EpochRecord, &TrainerState) -> Result<()>,
    {
        let mut records = Vec::new();
        while !self.is_finished() {
            let rec = self.run_epoch()?;
            observe(&rec, &self.state)?;
            records.push(rec);
        }
        Ok(records)
    }
}

/// Top-1 accuracy; ties in the logits resolve to the lowest class index.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let logits = model.predict(&x)?;
        let c = model.num_classes();
        for (row, &label) in logits.data().chunks(c).zip(&y) {
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
