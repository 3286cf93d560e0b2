//! Per-layer importance ratio and density allocation.
//!
//! Layer `l` (1-based over weight-bearing layers) with `W_l` weights gets
//! importance `I_l = W_l / (l · W_avg)`, where `W_avg` is the mean number of
//! weights per layer. A global density is turned into per-layer keep
//! fractions proportional to `I_l`, clamped to `[k_min, 1]` and rescaled so
//! the total kept budget is met.

use alloc::vec::Vec;

use crate::{Error, Result};

pub const DEFAULT_K_MIN: f64 = 0.01;

/// How `W_avg` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WAvgMode {
    /// Mean weights per layer, `Σ W_i / L`.
    #[default]
    Mean,
    /// `W_l / Σ W_i`, evaluated per layer. Makes `I_l = Σ W_i / l`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocConfig {
    pub k_min: f64,
    pub w_avg_mode: WAvgMode,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            k_min: DEFAULT_K_MIN,
            w_avg_mode: WAvgMode::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerStats {
    /// 1-based position among weight-bearing layers.
    pub position: usize,
    pub params: usize,
    pub total_params: usize,
    pub num_layers: usize,
}

pub fn layer_stats(sizes: &[usize]) -> Result<Vec<LayerStats>> {
    if sizes.is_empty() {
        return Err(Error::Config("no prunable layers".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(alloc::format!(
            "prunable layer sizes {sizes:?} include an empty layer"
        )));
    }
    let total = sizes.iter().sum();
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(i, &params)| LayerStats {
            position: i + 1,
            params,
            total_params: total,
            num_layers: sizes.len(),
        })
        .collect())
}

fn totals(stats: &[LayerStats]) -> Result<(usize, usize)> {
    let first = stats
        .first()
        .ok_or_else(|| Error::Config("no prunable layers".into()))?;
    Ok((first.total_params, first.num_layers))
}

/// Mean number of weights per prunable layer.
pub fn w_avg(stats: &[LayerStats]) -> Result<f64> {
    let (total, layers) = totals(stats)?;
    Ok(total as f64 / layers as f64)
}

fn w_avg_for(stats: &[LayerStats], layer: &LayerStats, mode: WAvgMode) -> Result<f64> {
    match mode {
        WAvgMode::Mean => w_avg(stats),
        WAvgMode::AsPrinted => Ok(layer.params as f64 / layer.total_params as f64),
    }
}

fn find(stats: &[LayerStats], position: usize) -> Result<&LayerStats> {
    stats
        .iter()
        .find(|s| s.position == position)
        .ok_or_else(|| Error::Argument(alloc::format!("no prunable layer at position {position}")))
}

/// `I_l = W_l / (l · W_avg)` with the mean-based `W_avg`.
pub fn importance(stats: &[LayerStats], position: usize) -> Result<f64> {
    importance_with(stats, position, WAvgMode::Mean)
}

pub fn importance_with(stats: &[LayerStats], position: usize, mode: WAvgMode) -> Result<f64> {
    let layer = find(stats, position)?;
    let avg = w_avg_for(stats, layer, mode)?;
    Ok(layer.params as f64 / (layer.position as f64 * avg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub position: usize,
    pub params: usize,
    pub importance: f64,
    pub keep_fraction: f64,
    /// Integer kept-weight count after apportionment.
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub w_avg: f64,
    pub density: f64,
    /// `round(density · total)`.
    pub budget: usize,
    pub rows: Vec<ImportanceRow>,
}

impl ImportanceTable {
    pub fn quotas(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.quota).collect()
    }

    pub fn kept_fraction_sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.keep_fraction * r.params as f64)
            .sum()
    }
}

/// Splits a global density into per-layer keep fractions.
///
/// Fractions are `clamp(s · I_l, lo_l, 1)` with `lo_l = max(k_min, 1/W_l)`
/// and the scale `s` solved exactly on the piecewise-linear budget curve.
/// A density of 1 keeps everything.
pub fn layer_keep_fractions(
    stats: &[LayerStats],
    density: f64,
    config: &AllocConfig,
) -> Result<ImportanceTable> {
    let (total, layers) = totals(stats)?;
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(alloc::format!(
            "density {density} must lie in (0, 1]"
        )));
    }
    if !(config.k_min >= 0.0 && config.k_min <= 1.0) {
        return Err(Error::Config(alloc::format!(
            "k_min {} must lie in [0, 1]",
            config.k_min
        )));
    }
    let importances = stats
        .iter()
        .map(|s| importance_with(stats, s.position, config.w_avg_mode))
        .collect::<Result<Vec<_>>>()?;
    let avg = w_avg(stats)?;
    let budget = libm::round(density * total as f64) as usize;

    if density >= 1.0 {
        let rows = stats
            .iter()
            .zip(&importances)
            .map(|(s, &imp)| ImportanceRow {
                position: s.position,
                params: s.params,
                importance: imp,
                keep_fraction: 1.0,
                quota: s.params,
            })
            .collect();
        return Ok(ImportanceTable {
            w_avg: avg,
            density,
            budget: total,
            rows,
        });
    }
    if density * (total as f64) < layers as f64 {
        return Err(Error::Config(alloc::format!(
            "density {density} keeps {:.2} of {total} weights, fewer than one per layer ({layers})",
            density * total as f64
        )));
    }

    let lows: Vec<f64> = stats
        .iter()
        .map(|s| config.k_min.max(1.0 / s.params as f64))
        .collect();
    let floor_budget: f64 = lows
        .iter()
        .zip(stats)
        .map(|(lo, s)| lo * s.params as f64)
        .sum();
    if floor_budget > budget as f64 + 1e-9 {
        return Err(Error::Config(alloc::format!(
            "per-layer minimum keeps {floor_budget:.1} weights, above the budget of {budget}"
        )));
    }

    let fractions = water_fill(&importances, &lows, stats, budget as f64);
    let quotas = apportion(&fractions, &lows, stats, budget);
    let rows = stats
        .iter()
        .zip(importances)
        .zip(fractions)
        .zip(quotas)
        .map(|(((s, imp), k), q)| ImportanceRow {
            position: s.position,
            params: s.params,
            importance: imp,
            keep_fraction: k,
            quota: q,
        })
        .collect();
    Ok(ImportanceTable {
        w_avg: avg,
        density,
        budget,
        rows,
    })
}

fn water_fill(imp: &[f64], lows: &[f64], stats: &[LayerStats], budget: f64) -> Vec<f64> {
    let clamp = |s: f64, i: usize| (s * imp[i]).clamp(lows[i], 1.0);
    let kept = |s: f64| -> f64 {
        (0..imp.len())
            .map(|i| clamp(s, i) * stats[i].params as f64)
            .sum()
    };
    let mut breaks: Vec<f64> = (0..imp.len())
        .flat_map(|i| [lows[i] / imp[i], 1.0 / imp[i]])
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut prev = breaks[0];
    if kept(prev) >= budget {
        return (0..imp.len()).map(|i| clamp(prev, i)).collect();
    }
    for &b in &breaks[1..] {
        if kept(b) >= budget {
            // Between prev and b every layer is either pinned or linear in s.
            let mid = 0.5 * (prev + b);
            let mut fixed = 0.0;
            let mut slope = 0.0;
            for i in 0..imp.len() {
                let w = stats[i].params as f64;
                let v = mid * imp[i];
                if v <= lows[i] {
                    fixed += lows[i] * w;
                } else if v >= 1.0 {
                    fixed += w;
                } else {
                    slope += imp[i] * w;
                }
            }
            let s = if slope > 0.0 {
                ((budget - fixed) / slope).clamp(prev, b)
            } else {
                b
            };
            return (0..imp.len()).map(|i| clamp(s, i)).collect();
        }
        prev = b;
    }
    // Budget equals the full model.
    alloc::vec![1.0; imp.len()]
}

// Largest-remainder rounding of k_l·W_l to integers summing to the budget,
// keeping every layer at or above its minimum.
fn apportion(fractions: &[f64], lows: &[f64], stats: &[LayerStats], budget: usize) -> Vec<usize> {
    let n = fractions.len();
    let ideal: Vec<f64> = (0..n)
        .map(|i| fractions[i] * stats[i].params as f64)
        .collect();
    let mins: Vec<usize> = (0..n)
        .map(|i| {
            let m = libm::ceil(lows[i] * stats[i].params as f64 - 1e-9) as usize;
            m.clamp(1, stats[i].params)
        })
        .collect();
    let mut q: Vec<usize> = (0..n)
        .map(|i| (libm::floor(ideal[i] + 1e-9) as usize).clamp(mins[i], stats[i].params))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let assigned: usize = q.iter().sum();
    if assigned < budget {
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - q[a] as f64;
            let rb = ideal[b] - q[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = budget - assigned;
        while left > 0 {
            let mut progressed = false;
            for &i in &order {
                if left == 0 {
                    break;
                }
                if q[i] < stats[i].params {
                    q[i] += 1;
                    left -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    } else if assigned > budget {
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - q[a] as f64;
            let rb = ideal[b] - q[b] as f64;
            ra.total_cmp(&rb).then(a.cmp(&b))
        });
        let mut extra = assigned - budget;
        for &i in &order {
            if extra == 0 {
                break;
            }
            if q[i] > mins[i] {
                q[i] -= 1;
                extra -= 1;
            }
        }
    }
    q
}
