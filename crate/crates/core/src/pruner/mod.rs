//! Sparsity masks and the iterative pruning machinery.

mod baseline;
mod mask;
mod schedule;
mod step;

pub use baseline::{baseline_prune, BaselineStrategy};
pub use mask::{apply_masks, MaskSet, SparsityMask};
pub use schedule::PruneSchedule;
pub use step::{prune_step, LayerPruneRecord, PruneConfig, PruneEvent, ThresholdMode};
