use alloc::vec;

use crate::{Error, Result, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits. Log-sum-exp is shifted by the row maximum.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            "softmax cross-entropy",
            alloc::format!("[{}, classes]", labels.len()),
            shape,
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let mut grad = vec![0.0; n * c];
    let mut total = 0.0;
    for (i, (row, g)) in logits.data().chunks(c).zip(grad.chunks_mut(c)).enumerate() {
        let y = labels[i] as usize;
        if y >= c {
            return Err(Error::Argument(alloc::format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (gj, &z) in g.iter_mut().zip(row) {
            let e = libm::exp(z - max);
            *gj = e;
            sum += e;
        }
        total += libm::log(sum) + max - row[y];
        for gj in g.iter_mut() {
            *gj /= sum * n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, Tensor::from_parts(vec![n, c], grad)))
}
