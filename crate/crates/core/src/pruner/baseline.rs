use alloc::vec::Vec;

use rand::Rng as _;

use super::mask::{MaskSet, SparsityMask};
use crate::allocate::ImportanceTable;
use crate::netcore::Model;
use crate::{seeded_rng, Error, Result};

const RANDOM_STREAM: u64 = 0x5EED_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineStrategy {
    /// Independent Bernoulli keep draws at each layer's quota fraction.
    Random,
    /// Keep the `quota` largest `|w|` per layer in a single pass.
    OneShotMagnitude,
}

/// Fresh masks for a comparison baseline at the quotas of `table`.
pub fn baseline_prune(
    model: &Model,
    strategy: BaselineStrategy,
    table: &ImportanceTable,
    seed: u64,
) -> Result<MaskSet> {
    let sizes = model.prunable_sizes();
    if table.rows.len() != sizes.len() {
        return Err(Error::shape(
            "importance table",
            sizes.len(),
            table.rows.len(),
        ));
    }
    let mut masks = Vec::with_capacity(sizes.len());
    for (pos, (layer, row)) in model.prunable().zip(&table.rows).enumerate() {
        let w = layer.weight.as_ref().expect("prunable").data();
        let mut mask = SparsityMask::ones(w.len());
        if row.quota < w.len() {
            match strategy {
                BaselineStrategy::OneShotMagnitude => {
                    let mut order: Vec<usize> = (0..w.len()).collect();
                    order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
                    for &i in &order[..w.len() - row.quota] {
                        mask.prune(i);
                    }
                }
                BaselineStrategy::Random => {
                    let mut rng = seeded_rng(seed, RANDOM_STREAM + pos as u64);
                    let p = row.quota as f64 / w.len() as f64;
                    for i in 0..w.len() {
                        if !rng.random_bool(p) {
                            mask.prune(i);
                        }
                    }
                    if mask.count_ones() == 0 {
                        let keep = rng.random_range(0..w.len());
                        mask = SparsityMask::ones(w.len());
                        for i in (0..w.len()).filter(|&i| i != keep) {
                            mask.prune(i);
                        }
                    }
                }
            }
        }
        masks.push(mask);
    }
    Ok(MaskSet::from_masks(masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocate::{layer_keep_fractions, layer_stats, AllocConfig};
    use crate::netcore::LayerKind;
    use crate::Tensor;
    use alloc::vec;

    fn single_layer(w: Vec<f64>) -> Model {
        let n = w.len();
        Model::from_params(
            vec![n],
            &[LayerKind::Linear {
                in_features: n,
                out_features: 1,
            }],
            vec![(Tensor::new(vec![1, n], w).unwrap(), Tensor::zeros(vec![1]))],
        )
        .unwrap()
    }

    fn table(n: usize, d: f64) -> ImportanceTable {
        layer_keep_fractions(&layer_stats(&[n]).unwrap(), d, &AllocConfig::default()).unwrap()
    }

    #[test]
    fn full_density_keeps_all() {
        let m = single_layer(vec![0.9, -0.1, 0.5, 0.2]);
        for s in [BaselineStrategy::Random, BaselineStrategy::OneShotMagnitude] {
            let masks = baseline_prune(&m, s, &table(4, 1.0), 1).unwrap();
            assert_eq!(masks, MaskSet::for_model(&m));
        }
    }

    #[test]
    fn oneshot_keeps_top_magnitudes() {
        let m = single_layer(vec![0.9, -0.1, -0.5, 0.2]);
        let masks =
            baseline_prune(&m, BaselineStrategy::OneShotMagnitude, &table(4, 0.5), 0).unwrap();
        assert_eq!(masks.masks()[0].kept().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn random_density_concentrates() {
        let m = single_layer((0..10_000).map(|i| i as f64 * 1e-4 + 0.1).collect());
        for d in [0.10, 0.05, 0.02] {
            for seed in 0..50 {
                let masks =
                    baseline_prune(&m, BaselineStrategy::Random, &table(10_000, d), seed).unwrap();
                assert!(
                    (masks.global_density() - d).abs() <= 0.01,
                    "seed {seed} d {d}"
                );
            }
        }
    }
}
