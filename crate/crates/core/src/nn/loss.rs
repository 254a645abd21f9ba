use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean softmax cross-entropy over a batch of logits `[N, C]`.
///
/// Returns the loss and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let (n, c) = (logits.shape()[0], logits.len() / logits.shape()[0]);
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            left: vec![targets.len()],
            right: vec![n],
        });
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (s, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::ClassOutOfRange {
                index: t,
                classes: c,
            });
        }
        let row: Vec<f64> = logits.data()[s * c..(s + 1) * c]
            .iter()
            .map(|x| x.as_f64())
            .collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - row[t];
        for (j, e) in exps.iter().enumerate() {
            let p = e / z - if j == t { 1.0 } else { 0.0 };
            grad.data_mut()[s * c + j] = T::from_f64_lossy(p / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// Index of the largest logit per row (first on ties).
pub fn predicted_classes<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let n = logits.shape()[0];
    let c = logits.len() / n;
    (0..n)
        .map(|s| {
            let row = &logits.data()[s * c..(s + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
