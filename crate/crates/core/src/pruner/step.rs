use alloc::vec::Vec;

use super::mask::MaskSet;
use crate::allocate::ImportanceTable;
use crate::magtrack::MagnitudeHistory;
use crate::netcore::Model;
use crate::{Error, Result};

/// How the per-layer threshold `τ_l` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdMode {
    /// `τ_l` sits at the quota boundary of the score ranking.
    #[default]
    Quota,
    /// A constant `τ`; the scheduled quota only acts as a floor.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Persistence requirement `K`.
    pub persistence: usize,
    pub threshold: ThresholdMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            persistence: crate::magtrack::DEFAULT_PERSISTENCE,
            threshold: ThresholdMode::Quota,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPruneRecord {
    /// 1-based prunable-layer position.
    pub position: usize,
    pub tau: f64,
    pub kept_before: usize,
    pub quota: usize,
    pub pruned: usize,
    /// Candidates below `τ_l` held back by the persistence rule.
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub epoch: usize,
    pub density_before: f64,
    pub density_after: f64,
    pub layers: Vec<LayerPruneRecord>,
}

impl PruneEvent {
    pub fn pruned(&self) -> usize {
        self.layers.iter().map(|l| l.pruned).sum()
    }

    pub fn shortfall(&self) -> usize {
        self.layers.iter().map(|l| l.shortfall).sum()
    }
}

/// One persistence-gated pruning pass toward the quotas in `table`.
///
/// In each layer the currently kept weights are ranked by `(score, index)`;
/// the lowest `kept − quota` are candidates and `τ_l` is the score of the
/// first survivor. A candidate is pruned only if its magnitude was below
/// `τ_l` for at least `K` buffered epochs. Blocked candidates are reported
/// as shortfall and stay kept; the kept count never drops under the quota.
pub fn prune_step(
    model: &mut Model,
    masks: &mut MaskSet,
    history: &MagnitudeHistory,
    table: &ImportanceTable,
    config: &PruneConfig,
    epoch: usize,
) -> Result<PruneEvent> {
    masks.check(model)?;
    if !history.is_warm() {
        return Err(Error::Usage(alloc::format!(
            "prune step at epoch {epoch} before the magnitude window is full"
        )));
    }
    if history.layer_sizes() != model.prunable_sizes().as_slice() {
        return Err(Error::Structural(
            "magnitude history does not match the model layers".into(),
        ));
    }
    if table.rows.len() != masks.masks().len() {
        return Err(Error::shape(
            "importance table",
            masks.masks().len(),
            table.rows.len(),
        ));
    }
    if config.persistence == 0 || config.persistence > history.window() {
        return Err(Error::Config(alloc::format!(
            "persistence requirement {} must lie in [1, {}]",
            config.persistence,
            history.window()
        )));
    }
    let density_before = masks.global_density();
    if table.density > density_before + 1e-12 {
        return Err(Error::Argument(alloc::format!(
            "target density {} exceeds current density {density_before}",
            table.density
        )));
    }

    // Never take the model below the global budget, even if the per-layer
    // quotas moved by a rounding step.
    let kept_total = masks.kept();
    let mut allowance = kept_total.saturating_sub(table.budget);

    let mut layers = Vec::with_capacity(table.rows.len());
    for (pos, row) in table.rows.iter().enumerate() {
        let mask = &masks.masks()[pos];
        let kept_before = mask.count_ones();
        let mut record = LayerPruneRecord {
            position: row.position,
            tau: 0.0,
            kept_before,
            quota: row.quota,
            pruned: 0,
            shortfall: 0,
        };
        let need = kept_before.saturating_sub(row.quota).min(allowance);
        if need == 0 {
            layers.push(record);
            continue;
        }
        let scores = history.layer_scores(pos)?;
        let mut ranked: Vec<usize> = mask.kept().collect();
        ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

        let (tau, candidates): (f64, &[usize]) = match config.threshold {
            ThresholdMode::Quota => (scores[ranked[need]], &ranked[..need]),
            ThresholdMode::Fixed(tau) => {
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(Error::Argument(alloc::format!("fixed threshold {tau}")));
                }
                let below = ranked.iter().take_while(|&&i| scores[i] < tau).count();
                (tau, &ranked[..below.min(need)])
            }
        };
        record.tau = tau;
        let counts = history.layer_below_counts(pos, tau)?;
        let mask = &mut masks.masks_mut()[pos];
        for &i in candidates {
            if counts[i] >= config.persistence {
                mask.prune(i);
                record.pruned += 1;
            } else {
                record.shortfall += 1;
            }
        }
        allowance -= record.pruned;
        layers.push(record);
    }
    masks.apply(model)?;
    Ok(PruneEvent {
        epoch,
        density_before,
        density_after: masks.global_density(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocate::{layer_keep_fractions, layer_stats, AllocConfig};
    use crate::magtrack::MomentumMode;
    use crate::netcore::LayerKind;
    use crate::Tensor;
    use alloc::vec;

    fn four_weight_model(w: [f64; 4]) -> Model {
        Model::from_params(
            vec![4],
            &[LayerKind::Linear {
                in_features: 4,
                out_features: 1,
            }],
            vec![(
                Tensor::new(vec![1, 4], w.to_vec()).unwrap(),
                Tensor::zeros(vec![1]),
            )],
        )
        .unwrap()
    }

    fn table(density: f64) -> ImportanceTable {
        layer_keep_fractions(
            &layer_stats(&[4]).unwrap(),
            density,
            &AllocConfig::default(),
        )
        .unwrap()
    }

    fn warm_history(model: &Model, epochs: usize) -> MagnitudeHistory {
        let mut h = MagnitudeHistory::for_model(3, model, MomentumMode::Window).unwrap();
        for _ in 0..epochs {
            h.record_epoch(model).unwrap();
        }
        h
    }

    #[test]
    fn prunes_two_lowest_scores() {
        let mut m = four_weight_model([0.4, 0.3, 0.2, 0.1]);
        let h = warm_history(&m, 3);
        let mut masks = MaskSet::for_model(&m);
        let cfg = PruneConfig {
            persistence: 3,
            ..PruneConfig::default()
        };
        let ev = prune_step(&mut m, &mut masks, &h, &table(0.5), &cfg, 7).unwrap();
        let kept: Vec<usize> = masks.masks()[0].kept().collect();
        assert_eq!(kept, vec![0, 1]);
        assert_eq!(ev.pruned(), 2);
        assert_eq!(ev.shortfall(), 0);
        assert_eq!(ev.layers[0].tau, 0.3);
        assert_eq!(ev.density_after, 0.5);
        assert_eq!(
            m.prunable().next().unwrap().weight.as_ref().unwrap().data(),
            &[0.4, 0.3, 0.0, 0.0]
        );
    }

    #[test]
    fn persistence_blocks_recent_drop() {
        // Weight 3 has the lowest mean (0.1) but sat under τ = 0.3 for only
        // two of the three buffered epochs.
        let mut h =
            MagnitudeHistory::for_model(3, &four_weight_model([0.0; 4]), MomentumMode::Window)
                .unwrap();
        for w3 in [0.0, 0.0, 0.3] {
            h.record_epoch(&four_weight_model([0.4, 0.3, 0.2, w3]))
                .unwrap();
        }
        let mut m = four_weight_model([0.4, 0.3, 0.2, 0.3]);
        let mut masks = MaskSet::for_model(&m);
        let cfg = PruneConfig {
            persistence: 3,
            ..PruneConfig::default()
        };
        let ev = prune_step(&mut m, &mut masks, &h, &table(0.5), &cfg, 0).unwrap();
        assert_eq!(ev.layers[0].tau, 0.3);
        assert_eq!(ev.pruned(), 1);
        assert_eq!(ev.shortfall(), 1);
        assert_eq!(masks.masks()[0].kept().collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn equal_density_leaves_masks_unchanged() {
        let mut m = four_weight_model([0.4, 0.3, 0.2, 0.1]);
        let h = warm_history(&m, 3);
        let mut masks = MaskSet::for_model(&m);
        let cfg = PruneConfig {
            persistence: 3,
            ..PruneConfig::default()
        };
        let ev = prune_step(&mut m, &mut masks, &h, &table(1.0), &cfg, 0).unwrap();
        assert_eq!(ev.pruned(), 0);
        assert_eq!(masks, MaskSet::for_model(&m));
    }

    #[test]
    fn cold_history_rejected() {
        let mut m = four_weight_model([0.4, 0.3, 0.2, 0.1]);
        let h = warm_history(&m, 2);
        let mut masks = MaskSet::for_model(&m);
        assert!(matches!(
            prune_step(
                &mut m,
                &mut masks,
                &h,
                &table(0.5),
                &PruneConfig::default(),
                0
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn fixed_threshold_respects_quota_floor() {
        let mut m = four_weight_model([0.4, 0.3, 0.2, 0.1]);
        let h = warm_history(&m, 3);
        let mut masks = MaskSet::for_model(&m);
        let cfg = PruneConfig {
            persistence: 1,
            threshold: ThresholdMode::Fixed(0.35),
        };
        let ev = prune_step(&mut m, &mut masks, &h, &table(0.5), &cfg, 0).unwrap();
        assert_eq!(ev.pruned(), 2);
        assert_eq!(masks.masks()[0].kept().collect::<Vec<_>>(), vec![0, 1]);

        let mut masks = MaskSet::for_model(&m);
        let mut m = four_weight_model([0.4, 0.3, 0.2, 0.1]);
        let cfg = PruneConfig {
            persistence: 1,
            threshold: ThresholdMode::Fixed(0.15),
        };
        let ev = prune_step(&mut m, &mut masks, &h, &table(0.5), &cfg, 0).unwrap();
        assert_eq!(ev.pruned(), 1);
    }
}
