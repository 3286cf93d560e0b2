//! Per-weight magnitude history over a sliding window of epochs.
//!
//! Each tracked weight keeps the last `T` epoch-end values of `|w|`. The
//! momentum score is the mean of that window (or, optionally, an
//! exponential moving average); the persistence count is how many of the
//! buffered epochs sat strictly below a threshold.

use alloc::vec;
use alloc::vec::Vec;

use crate::netcore::Model;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 15;
pub const DEFAULT_PERSISTENCE: usize = 10;
pub const DEFAULT_EMA_COEFFICIENT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MomentumMode {
    /// Uniform mean of the last `T` magnitudes.
    #[default]
    Window,
    /// `s ← c·s + (1 − c)·|w|`, seeded with the first recorded magnitude.
    Ema { coefficient: f64 },
}

/// Window length `T` and persistence requirement `K`, with `1 ≤ K ≤ T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersistenceConfig {
    window: usize,
    required: usize,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            required: DEFAULT_PERSISTENCE,
        }
    }
}

impl PersistenceConfig {
    pub fn new(window: usize, required: usize) -> Result<Self> {
        if window == 0 || required == 0 || required > window {
            return Err(Error::Config(alloc::format!(
                "persistence requirement K={required} must satisfy 1 <= K <= T={window}"
            )));
        }
        Ok(Self { window, required })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn required(&self) -> usize {
        self.required
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeHistory {
    window: usize,
    mode: MomentumMode,
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    tracked: usize,
    // slot-major ring: entry for parameter p in slot s lives at s * tracked + p
    ring: Vec<f64>,
    head: usize,
    epochs_recorded: usize,
    ema: Option<Vec<f64>>,
}

impl MagnitudeHistory {
    pub fn new(window: usize, layer_sizes: Vec<usize>, mode: MomentumMode) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("magnitude window must be positive".into()));
        }
        if layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::Config(alloc::format!(
                "cannot track layer sizes {layer_sizes:?}"
            )));
        }
        if let MomentumMode::Ema { coefficient } = mode {
            if !(0.0..1.0).contains(&coefficient) {
                return Err(Error::Config(alloc::format!(
                    "EMA coefficient {coefficient} must lie in [0, 1)"
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len());
        let mut tracked = 0;
        for &s in &layer_sizes {
            offsets.push(tracked);
            tracked += s;
        }
        Ok(Self {
            window,
            mode,
            ring: vec![0.0; window * tracked],
            layer_sizes,
            offsets,
            tracked,
            head: 0,
            epochs_recorded: 0,
            ema: match mode {
                MomentumMode::Window => None,
                MomentumMode::Ema { .. } => Some(vec![0.0; tracked]),
            },
        })
    }

    pub fn for_model(window: usize, model: &Model, mode: MomentumMode) -> Result<Self> {
        Self::new(window, model.prunable_sizes(), mode)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mode(&self) -> MomentumMode {
        self.mode
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Flat index of the first weight of prunable layer `position` (0-based).
    pub fn layer_offset(&self, position: usize) -> usize {
        self.offsets[position]
    }

    pub fn tracked(&self) -> usize {
        self.tracked
    }

    pub fn epochs_recorded(&self) -> usize {
        self.epochs_recorded
    }

    pub fn is_warm(&self) -> bool {
        self.epochs_recorded >= self.window
    }

    /// Number of `f64`s held by the history.
    pub fn stored_floats(&self) -> usize {
        self.ring.len() + self.ema.as_ref().map_or(0, Vec::len)
    }

    /// Appends `|w|` for every prunable weight of `model`.
    pub fn record_epoch(&mut self, model: &Model) -> Result<()> {
        let sizes = model.prunable_sizes();
        if sizes != self.layer_sizes {
            return Err(Error::Structural(alloc::format!(
                "history tracks layers {:?} but model has {:?}",
                self.layer_sizes,
                sizes
            )));
        }
        let base = self.head * self.tracked;
        let slot = &mut self.ring[base..base + self.tracked];
        let mut k = 0;
        for layer in model.prunable() {
            for &w in layer.weight.as_ref().expect("prunable").data() {
                slot[k] = w.abs();
                k += 1;
            }
        }
        if let (Some(ema), MomentumMode::Ema { coefficient }) = (self.ema.as_mut(), self.mode) {
            let first = self.epochs_recorded == 0;
            for (e, &m) in ema.iter_mut().zip(slot.iter()) {
                *e = if first {
                    m
                } else {
                    coefficient * *e + (1.0 - coefficient) * m
                };
            }
        }
        self.head = (self.head + 1) % self.window;
        self.epochs_recorded += 1;
        Ok(())
    }

    fn filled(&self) -> usize {
        self.epochs_recorded.min(self.window)
    }

    /// Buffered magnitudes of `param`, oldest first.
    pub fn buffered(&self, param: usize) -> impl Iterator<Item = f64> + '_ {
        let filled = self.filled();
        let start = (self.head + self.window - filled) % self.window;
        (0..filled).map(move |i| self.ring[((start + i) % self.window) * self.tracked + param])
    }

    fn check_query(&self, param: usize) -> Result<()> {
        if !self.is_warm() {
            return Err(Error::Usage(alloc::format!(
                "magnitude history needs {} epochs, has {}",
                self.window,
                self.epochs_recorded
            )));
        }
        if param >= self.tracked {
            return Err(Error::Argument(alloc::format!(
                "parameter {param} out of range ({} tracked)",
                self.tracked
            )));
        }
        Ok(())
    }

    pub fn momentum_score(&self, param: usize) -> Result<f64> {
        self.check_query(param)?;
        let mut scratch = Vec::with_capacity(self.window);
        Ok(self.score_with(param, &mut scratch))
    }

    // Sorted summation makes the window mean exactly invariant to the order
    // the magnitudes arrived in; summing offsets from the minimum makes a
    // constant window return that constant exactly.
    fn score_with(&self, param: usize, scratch: &mut Vec<f64>) -> f64 {
        if let Some(ema) = &self.ema {
            return ema[param];
        }
        scratch.clear();
        scratch.extend(self.buffered(param));
        scratch.sort_by(f64::total_cmp);
        let min = scratch[0];
        let dev: f64 = scratch.iter().map(|&v| v - min).sum();
        min + dev / scratch.len() as f64
    }

    pub fn below_count(&self, param: usize, threshold: f64) -> Result<usize> {
        self.check_query(param)?;
        check_threshold(threshold)?;
        Ok(self.buffered(param).filter(|&m| m < threshold).count())
    }

    /// Momentum scores of every weight in prunable layer `position`.
    pub fn layer_scores(&self, position: usize) -> Result<Vec<f64>> {
        let off = self.offsets[position];
        self.check_query(off)?;
        let mut scratch = Vec::with_capacity(self.window);
        Ok((off..off + self.layer_sizes[position])
            .map(|p| self.score_with(p, &mut scratch))
            .collect())
    }

    /// Persistence counts of every weight in prunable layer `position`.
    pub fn layer_below_counts(&self, position: usize, threshold: f64) -> Result<Vec<usize>> {
        let off = self.offsets[position];
        self.check_query(off)?;
        check_threshold(threshold)?;
        Ok((off..off + self.layer_sizes[position])
            .map(|p| self.buffered(p).filter(|&m| m < threshold).count())
            .collect())
    }

    /// Raw state for serialization: `(ring, head, epochs_recorded, ema)`.
    pub fn raw_parts(&self) -> (&[f64], usize, usize, Option<&[f64]>) {
        (
            &self.ring,
            self.head,
            self.epochs_recorded,
            self.ema.as_deref(),
        )
    }

    /// Rebuilds a history from [`Self::raw_parts`] output.
    pub fn from_raw_parts(
        window: usize,
        layer_sizes: Vec<usize>,
        mode: MomentumMode,
        ring: Vec<f64>,
        head: usize,
        epochs_recorded: usize,
        ema: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut h = Self::new(window, layer_sizes, mode)?;
        if ring.len() != h.ring.len() || head >= window {
            return Err(Error::Structural(
                "magnitude ring does not match layout".into(),
            ));
        }
        if ring.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Structural(
                "magnitude ring holds invalid entries".into(),
            ));
        }
        if ema.as_ref().map(Vec::len) != h.ema.as_ref().map(Vec::len) {
            return Err(Error::Structural("EMA state does not match mode".into()));
        }
        h.ring = ring;
        h.head = head;
        h.epochs_recorded = epochs_recorded;
        h.ema = ema;
        Ok(h)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::Argument(alloc::format!(
            "threshold {threshold} must be a finite non-negative number"
        )));
    }
    Ok(())
}
