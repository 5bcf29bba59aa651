use rand::seq::SliceRandom;

use crate::nn::SegmentState;
use crate::rng::{self, tag};
use crate::{Error, Result, Tensor};

/// A client's local data: inputs shaped `[n, ...sample shape]` and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Shard {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::config(format!(
                "shard has {} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::config("empty shard"));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        (self.inputs.select_rows(rows), rows.iter().map(|&r| self.labels[r]).collect())
    }

    /// Label counts over `classes` classes.
    pub fn histogram(&self, classes: usize) -> Vec<f64> {
        let mut h = vec![0.0; classes];
        for &l in &self.labels {
            h[l] += 1.0;
        }
        h
    }
}

/// Minibatch index lists of one pass over `n` samples, shuffled by the stream
/// `(seed, client, epoch)`. The incomplete tail batch is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, client: usize, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::BATCH, client as u64, epoch as u64]));
    idx.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub shard: Shard,
    /// One segment, or head and tail for U-shaped SL.
    pub segments: Vec<SegmentState>,
    pub batch_size: usize,
}

impl ClientState {
    pub fn new(id: usize, shard: Shard, segments: Vec<SegmentState>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > shard.len() {
            return Err(Error::config(format!(
                "client {id}: batch size {batch_size} must be in 1..={}",
                shard.len()
            )));
        }
        if segments.is_empty() || segments.len() > 2 {
            return Err(Error::config(format!(
                "client {id}: expected 1 or 2 segments, got {}",
                segments.len()
            )));
        }
        Ok(Self {
            id,
            shard,
            segments,
            batch_size,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.shard.len() / self.batch_size
    }

    pub fn epoch_batches(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        epoch_batches(self.shard.len(), self.batch_size, seed, self.id, epoch)
    }

    pub fn head(&self) -> &SegmentState {
        &self.segments[0]
    }
}
