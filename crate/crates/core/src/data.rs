//! Synthetic datasets and non-IID client partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::protocols::Shard;
use crate::rng::{self, tag};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gaussian blobs around `classes` centers drawn uniformly from
    /// `[-4, 4]^dim`. Centers depend on `seed` only, so train and test sets
    /// drawn with different `split` values share them.
    pub fn blobs(n: usize, classes: usize, dim: usize, noise: f64, seed: u64, split: u64) -> Result<Self> {
        if classes < 2 || dim == 0 || n == 0 || !(noise >= 0.0) {
            return Err(Error::config(format!(
                "blobs need n >= 1, classes >= 2, dim >= 1, noise >= 0 (got n={n} classes={classes} dim={dim} noise={noise})"
            )));
        }
        let mut crng = rng::stream(seed, &[tag::DATA, 0]);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| crng.random_range(-4.0..4.0)).collect())
            .collect();
        let mut srng = rng::stream(seed, &[tag::DATA, 1, split]);
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(&mut srng);
        let mut data = Vec::with_capacity(n * dim);
        for &y in &labels {
            for c in &centers[y] {
                let z: f64 = StandardNormal.sample(&mut srng);
                data.push(c + noise * z);
            }
        }
        Ok(Self {
            inputs: Tensor::from_vec(vec![n, dim], data)?,
            labels,
            classes,
        })
    }

    /// The two interleaved half circles, with Gaussian noise.
    pub fn two_moons(n: usize, noise: f64, seed: u64, split: u64) -> Result<Self> {
        if n == 0 || !(noise >= 0.0) {
            return Err(Error::config(format!("two-moons need n >= 1 and noise >= 0 (got n={n} noise={noise})")));
        }
        let mut r = rng::stream(seed, &[tag::DATA, 2, split]);
        let mut labels = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(2 * n);
        for i in 0..n {
            let y = i % 2;
            let t: f64 = r.random_range(0.0..std::f64::consts::PI);
            let (x0, x1) = if y == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            let z0: f64 = StandardNormal.sample(&mut r);
            let z1: f64 = StandardNormal.sample(&mut r);
            data.push(x0 + noise * z0);
            data.push(x1 + noise * z1);
            labels.push(y);
        }
        Ok(Self {
            inputs: Tensor::from_vec(vec![n, 2], data)?,
            labels,
            classes: 2,
        })
    }

    pub fn histogram(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.classes];
        for &l in &self.labels {
            h[l] += 1.0;
        }
        h
    }

    pub fn shard(&self, rows: &[usize]) -> Result<Shard> {
        let (x, y) = (self.inputs.select_rows(rows), rows.iter().map(|&r| self.labels[r]).collect());
        Shard::new(x, y)
    }
}

/// Splits sample indices among `clients` with per-class Dirichlet(`beta`)
/// proportions. `beta = inf` deals a shuffled dataset round-robin. Draws are
/// repeated until every client holds at least `min_size` samples.
pub fn dirichlet_partition(
    labels: &[usize],
    classes: usize,
    clients: usize,
    beta: f64,
    min_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if clients == 0 || clients * min_size > labels.len() {
        return Err(Error::config(format!(
            "cannot give {clients} clients at least {min_size} of {} samples",
            labels.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::config(format!("dirichlet_beta must be > 0, got {beta}")));
    }
    let mut r = rng::stream(seed, &[tag::PARTITION]);
    if beta.is_infinite() {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut r);
        let mut parts = vec![Vec::new(); clients];
        for (i, s) in idx.into_iter().enumerate() {
            parts[i % clients].push(s);
        }
        for p in &mut parts {
            p.sort_unstable();
        }
        return Ok(parts);
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::config(format!("dirichlet_beta: {e}")))?;
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for _ in 0..1000 {
        let mut parts = vec![Vec::new(); clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut r);
            let w: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut r)).collect();
            let total: f64 = w.iter().sum();
            let mut acc = 0.0;
            let mut from = 0;
            for (c, wc) in w.iter().enumerate() {
                acc += wc;
                let to = if c + 1 == clients {
                    members.len()
                } else {
                    ((acc / total) * members.len() as f64).round() as usize
                };
                let to = to.clamp(from, members.len());
                parts[c].extend_from_slice(&members[from..to]);
                from = to;
            }
        }
        if parts.iter().all(|p| p.len() >= min_size) {
            for p in &mut parts {
                p.sort_unstable();
            }
            return Ok(parts);
        }
    }
    Err(Error::config(format!(
        "dirichlet_beta={beta} could not give every client {min_size} samples; raise beta or n"
    )))
}
