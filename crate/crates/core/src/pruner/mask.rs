use alloc::vec;
use alloc::vec::Vec;

use crate::netcore::{Gradients, Model};
use crate::{Error, Result};

/// Bit-packed keep (1) / pruned (0) flags for one weight tensor.
///
/// Bits only ever go from 1 to 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    len: usize,
    words: Vec<u64>,
}

impl SparsityMask {
    pub fn ones(len: usize) -> Self {
        let mut words = vec![u64::MAX; len.div_ceil(64)];
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        Self { len, words }
    }

    /// Rebuilds a mask from packed words (bit `i` of word `i / 64`).
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return Err(Error::shape("mask words", len.div_ceil(64), words.len()));
        }
        if !len.is_multiple_of(64) && words.last().is_some_and(|w| w >> (len % 64) != 0) {
            return Err(Error::Structural(
                "mask has bits set past its length".into(),
            ));
        }
        Ok(Self { len, words })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Clears bit `i`; returns whether it was set.
    pub fn prune(&mut self, i: usize) -> bool {
        let was = self.get(i);
        self.words[i / 64] &= !(1u64 << (i % 64));
        was
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.len as f64
    }

    /// Kept positions in ascending order.
    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    /// True when every kept bit of `self` is also kept in `earlier`.
    pub fn is_subset_of(&self, earlier: &SparsityMask) -> bool {
        self.len == earlier.len
            && self
                .words
                .iter()
                .zip(&earlier.words)
                .all(|(a, b)| a & !b == 0)
    }
}

/// One mask per prunable layer of a model, in forward order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    masks: Vec<SparsityMask>,
}

impl MaskSet {
    pub fn for_model(model: &Model) -> Self {
        Self {
            masks: model
                .prunable_sizes()
                .into_iter()
                .map(SparsityMask::ones)
                .collect(),
        }
    }

    pub fn from_masks(masks: Vec<SparsityMask>) -> Self {
        Self { masks }
    }

    pub fn masks(&self) -> &[SparsityMask] {
        &self.masks
    }

    pub(crate) fn masks_mut(&mut self) -> &mut [SparsityMask] {
        &mut self.masks
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        let sizes = model.prunable_sizes();
        let ours: Vec<usize> = self.masks.iter().map(SparsityMask::len).collect();
        if sizes != ours {
            return Err(Error::shape("mask set", sizes, ours));
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.masks.iter().map(SparsityMask::count_ones).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().map(SparsityMask::len).sum()
    }

    pub fn global_density(&self) -> f64 {
        self.kept() as f64 / self.total() as f64
    }

    /// Zeroes every weight whose mask bit is 0.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        self.check(model)?;
        for (pos, mask) in self.masks.iter().enumerate() {
            let w = model.prunable_weight_mut(pos).expect("checked above");
            zero_pruned(mask, w);
        }
        Ok(())
    }

    pub fn mask_gradients(&self, grads: &mut Gradients) {
        for (mask, g) in self.masks.iter().zip(grads.params_mut()) {
            zero_pruned(mask, g.weight.data_mut());
        }
    }

    /// Weights that are nonzero although their mask bit is 0.
    pub fn masked_nonzeros(&self, model: &Model) -> usize {
        self.masks
            .iter()
            .zip(model.prunable())
            .map(|(mask, layer)| {
                let w = layer.weight.as_ref().expect("prunable").data();
                (0..mask.len())
                    .filter(|&i| !mask.get(i) && w[i] != 0.0)
                    .count()
            })
            .sum()
    }

    /// True when no bit went from 0 (in `earlier`) to 1 (in `self`).
    pub fn is_subset_of(&self, earlier: &MaskSet) -> bool {
        self.masks.len() == earlier.masks.len()
            && self
                .masks
                .iter()
                .zip(&earlier.masks)
                .all(|(a, b)| a.is_subset_of(b))
    }

    /// Intersection with `other`; used to fold a fresh mask into an existing one.
    pub fn intersect(&mut self, other: &MaskSet) -> Result<()> {
        if self.masks.len() != other.masks.len() {
            return Err(Error::shape(
                "mask intersection",
                self.masks.len(),
                other.masks.len(),
            ));
        }
        for (a, b) in self.masks.iter_mut().zip(&other.masks) {
            if a.len != b.len {
                return Err(Error::shape("mask intersection", a.len, b.len));
            }
            for (x, y) in a.words.iter_mut().zip(&b.words) {
                *x &= y;
            }
        }
        Ok(())
    }
}

fn zero_pruned(mask: &SparsityMask, w: &mut [f64]) {
    for (wi, chunk) in mask.words.iter().zip(w.chunks_mut(64)) {
        if *wi == u64::MAX {
            continue;
        }
        for (b, v) in chunk.iter_mut().enumerate() {
            if wi >> b & 1 == 0 {
                *v = 0.0;
            }
        }
    }
}

/// Zeroes pruned weights of `model` in place.
pub fn apply_masks(model: &mut Model, masks: &MaskSet) -> Result<()> {
    masks.apply(model)
}
