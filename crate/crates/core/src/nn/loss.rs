use crate::{Error, Result, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits, `(softmax - onehot) / batch`.
pub fn loss_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::Tensor(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let (batch, classes) = (logits.rows(), logits.row_len());
    if labels.len() != batch {
        return Err(Error::Shape {
            layer: usize::MAX,
            expected: vec![batch],
            actual: vec![labels.len()],
        });
    }
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Label { sample, label, classes });
    }
    let scale = 1.0 / batch as f64;
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.row(n);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        let g = &mut grad[n * classes..(n + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            *gv = (p - target) * scale;
        }
    }
    Ok((total * scale, Tensor::from_parts(logits.shape().to_vec(), grad)))
}

/// Index of the largest logit per row.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|n| {
            let row = logits.row(n);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
