//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys are namespaced
//! (`optimizer.lr`, `prune.window_T`, ...); unknown keys are errors.
//! List values are comma separated.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use weightmom_core::allocate::WAvgMode;
use weightmom_core::magtrack::{MomentumMode, DEFAULT_EMA_COEFFICIENT};
use weightmom_core::pruner::ThresholdMode;
use weightmom_core::train::{Method, TrainConfig};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
    Synthetic,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// `input → 256 → 128 → classes`
    Mlp,
    /// Two stride-2 3×3 convolutions, then `→ 64 → classes`.
    SmallConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_path: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic_samples: usize,
    pub data_seed: u64,
    pub arch: Arch,
    pub densities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Pruning methods run per (density, seed); the dense reference always runs.
    pub methods: Vec<Method>,
    /// Template for every run; method, seed and target density are set per cell.
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Worker threads for independent cells (0 = available parallelism).
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            data_path: None,
            train_limit: None,
            test_limit: None,
            synthetic_samples: 1000,
            data_seed: 0,
            arch: Arch::Mlp,
            densities: vec![0.10, 0.05, 0.02],
            seeds: vec![1, 2, 3],
            methods: vec![Method::WeightMom, Method::OneShot, Method::Random],
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} for {key}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut baseline_epoch_set = false;
        let mut ema_coefficient = DEFAULT_EMA_COEFFICIENT;
        let mut momentum = "window".to_string();
        let mut threshold = "quota".to_string();
        let mut fixed_tau: Option<f64> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ConfigLine {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            if key == "baseline.prune_epoch" {
                baseline_epoch_set = true;
            }
            match key {
                "prune.momentum" => momentum = value.to_string(),
                "prune.ema_coefficient" => ema_coefficient = parse(key, value).map_err(err)?,
                "prune.threshold" => threshold = value.to_string(),
                "prune.fixed_tau" => fixed_tau = Some(parse(key, value).map_err(err)?),
                _ => cfg.set(key, value).map_err(err)?,
            }
        }
        cfg.train.momentum = match momentum.as_str() {
            "window" => MomentumMode::Window,
            "ema" => MomentumMode::Ema {
                coefficient: ema_coefficient,
            },
            other => return Err(Error::Config(format!("unknown prune.momentum {other:?}"))),
        };
        cfg.train.prune.threshold = match (threshold.as_str(), fixed_tau) {
            ("quota", _) => ThresholdMode::Quota,
            ("fixed", Some(t)) => ThresholdMode::Fixed(t),
            ("fixed", None) => {
                return Err(Error::Config(
                    "prune.threshold = fixed needs prune.fixed_tau".into(),
                ))
            }
            (other, _) => return Err(Error::Config(format!("unknown prune.threshold {other:?}"))),
        };
        if !baseline_epoch_set {
            cfg.train.baseline_epoch = cfg.train.schedule.final_epoch;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "data.dataset" => {
                self.dataset = match value {
                    "mnist" => DatasetKind::Mnist,
                    "cifar10" => DatasetKind::Cifar10,
                    "cifar100" => DatasetKind::Cifar100,
                    "synthetic" => DatasetKind::Synthetic,
                    _ => return Err(format!("unknown dataset {value:?}")),
                }
            }
            "data.path" => self.data_path = Some(PathBuf::from(value)),
            "data.train_limit" => self.train_limit = Some(parse(key, value)?),
            "data.test_limit" => self.test_limit = Some(parse(key, value)?),
            "data.synthetic_samples" => self.synthetic_samples = parse(key, value)?,
            "data.seed" => self.data_seed = parse(key, value)?,
            "model.arch" => {
                self.arch = match value {
                    "mlp" => Arch::Mlp,
                    "smallconv" => Arch::SmallConv,
                    _ => return Err(format!("unknown model {value:?}")),
                }
            }
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "optimizer.lr" => t.adam.schedule.base_lr = parse(key, value)?,
            "optimizer.decay" => t.adam.schedule.decay = parse(key, value)?,
            "optimizer.decay_interval" => t.adam.schedule.interval = parse(key, value)?,
            "optimizer.beta1" => t.adam.beta1 = parse(key, value)?,
            "optimizer.beta2" => t.adam.beta2 = parse(key, value)?,
            "optimizer.eps" => t.adam.eps = parse(key, value)?,
            "prune.window_T" => t.window = parse(key, value)?,
            "prune.persistence_K" => t.prune.persistence = parse(key, value)?,
            "allocate.k_min" => t.alloc.k_min = parse(key, value)?,
            "allocate.w_avg_mode" => {
                t.alloc.w_avg_mode = match value {
                    "mean" => WAvgMode::Mean,
                    "as_printed" => WAvgMode::AsPrinted,
                    _ => return Err(format!("unknown w_avg_mode {value:?}")),
                }
            }
            "schedule.warmup" => t.schedule.warmup = parse(key, value)?,
            "schedule.interval_n" => t.schedule.interval = parse(key, value)?,
            "schedule.final_epoch" => t.schedule.final_epoch = parse(key, value)?,
            "schedule.ramp_exponent" => t.schedule.exponent = parse(key, value)?,
            "baseline.prune_epoch" => t.baseline_epoch = parse(key, value)?,
            "experiment.densities" => self.densities = parse_list(key, value)?,
            "experiment.seeds" => self.seeds = parse_list(key, value)?,
            "experiment.methods" => {
                self.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match Method::parse(s) {
                        Some(Method::Dense) => {
                            Err("dense always runs; list pruning methods only".to_string())
                        }
                        Some(m) => Ok(m),
                        None => Err(format!("unknown method {s:?}")),
                    })
                    .collect::<std::result::Result<_, _>>()?
            }
            "experiment.threads" => self.threads = parse(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "checkpoint.every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() {
            return Err(Error::Config("experiment.densities is empty".into()));
        }
        if let Some(d) = self.densities.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::Config(format!("density {d} must lie in (0, 1)")));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds is empty".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.dataset != DatasetKind::Synthetic && self.data_path.is_none() {
            return Err(Error::Config(format!(
                "dataset {} needs data.path",
                self.dataset.name()
            )));
        }
        let mut probe = self.train.clone();
        probe.method = Method::WeightMom;
        probe.validate()?;
        Ok(())
    }

    /// Per-run training config for one cell.
    pub fn cell_config(&self, method: Method, density: f64, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.method = method;
        t.seed = seed;
        t.schedule.target_density = density;
        t
    }
}
