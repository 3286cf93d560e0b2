use crate::{Error, Result};

/// Epoch-indexed global density plan.
///
/// Density stays at 1 until `warmup`, follows
/// `d_final + (1 − d_final)·(1 − (e − warmup)/(final − warmup))^p` up to
/// `final_epoch`, then holds at `d_final`. Prune steps happen every
/// `interval` epochs from `warmup` on, plus at `final_epoch` itself when
/// the interval does not land on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneSchedule {
    pub warmup: usize,
    pub interval: usize,
    pub final_epoch: usize,
    pub target_density: f64,
    pub exponent: f64,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            warmup: 15,
            interval: 5,
            final_epoch: 35,
            target_density: 0.10,
            exponent: 3.0,
        }
    }
}

impl PruneSchedule {
    /// Checks the schedule against a magnitude window of `window` epochs.
    pub fn validate(&self, window: usize) -> Result<()> {
        if self.warmup < window {
            return Err(Error::Config(alloc::format!(
                "warmup {} is shorter than the magnitude window {window}",
                self.warmup
            )));
        }
        if self.interval == 0 {
            return Err(Error::Config("prune interval must be at least 1".into()));
        }
        if self.final_epoch <= self.warmup {
            return Err(Error::Config(alloc::format!(
                "final prune epoch {} must come after warmup {}",
                self.final_epoch,
                self.warmup
            )));
        }
        if !(self.target_density > 0.0 && self.target_density <= 1.0) {
            return Err(Error::Config(alloc::format!(
                "target density {} must lie in (0, 1]",
                self.target_density
            )));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(Error::Config("ramp exponent must be positive".into()));
        }
        Ok(())
    }

    pub fn density_at(&self, epoch: usize) -> f64 {
        if epoch <= self.warmup {
            return 1.0;
        }
        if epoch >= self.final_epoch {
            return self.target_density;
        }
        let span = (self.final_epoch - self.warmup) as f64;
        let progress = (epoch - self.warmup) as f64 / span;
        let d = self.target_density;
        d + (1.0 - d) * libm::pow(1.0 - progress, self.exponent)
    }

    pub fn is_prune_epoch(&self, epoch: usize) -> bool {
        epoch >= self.warmup
            && epoch <= self.final_epoch
            && ((epoch - self.warmup).is_multiple_of(self.interval) || epoch == self.final_epoch)
    }
}
