//! In-memory labelled samples.

use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// Samples stored as contiguous `f32` features (one `sample_len` block per
/// sample) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    features: Vec<f32>,
    labels: Vec<u32>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        sample_shape: Vec<usize>,
        features: Vec<f32>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        let sample_len: usize = sample_shape.iter().product();
        if sample_len == 0 || num_classes == 0 {
            return Err(Error::Argument(alloc::format!(
                "dataset needs a non-empty sample shape and classes, got {sample_shape:?} / {num_classes}"
            )));
        }
        if features.len() != sample_len * labels.len() {
            return Err(Error::shape(
                "dataset features",
                sample_len * labels.len(),
                features.len(),
            ));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= num_classes) {
            return Err(Error::Argument(alloc::format!(
                "label {} of sample {i} is not below {num_classes} classes",
                labels[i]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            sample_shape,
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.features[i * n..(i + 1) * n]
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.features.truncate(n * self.sample_len());
        }
    }

    /// Stacks the selected samples into a `[batch, ..sample_shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<u32>) {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend(self.sample(i).iter().map(|&v| v as f64));
            labels.push(self.labels[i]);
        }
        let mut shape = Vec::with_capacity(self.sample_shape.len() + 1);
        shape.push(indices.len());
        shape.extend_from_slice(&self.sample_shape);
        (Tensor::from_parts(shape, data), labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validates_labels_and_lengths() {
        assert!(Dataset::new(vec![2], vec![0.0; 4], vec![0, 1], 2).is_ok());
        assert!(Dataset::new(vec![2], vec![0.0; 3], vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![2], vec![0.0; 4], vec![0, 2], 2).is_err());
    }

    #[test]
    fn batch_stacks_samples() {
        let d = Dataset::new(
            vec![2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let (x, y) = d.batch(&[2, 0]);
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(y, vec![0, 0]);
    }
}
