//! Single-node minibatch SGD, the reference every split protocol is checked
//! against.

use super::client::Shard;
use crate::nn::{loss_grad, SegmentState};
use crate::Result;

/// One SGD step on `model` over the given batch. Returns the mean loss.
pub fn centralized_step(model: &mut SegmentState, shard: &Shard, rows: &[usize], lr: f64) -> Result<f64> {
    let (x, y) = shard.batch(rows);
    let (logits, cache) = model.forward(&x)?;
    let (loss, g) = loss_grad(&logits, &y)?;
    let (_, pg) = model.backward(&cache, &g)?;
    model.sgd_step(&pg, lr)?;
    Ok(loss)
}

/// Runs `centralized_step` over `batches` in order. Returns the sample-weighted
/// mean loss.
pub fn centralized_epoch(model: &mut SegmentState, shard: &Shard, batches: &[Vec<usize>], lr: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for rows in batches {
        sum += centralized_step(model, shard, rows, lr)? * rows.len() as f64;
        n += rows.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
