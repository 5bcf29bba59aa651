//! Client selection trading participant count against label diversity.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    /// Estimated round latency of this client, seconds.
    pub latency: f64,
    /// Label counts, or any non-negative feature histogram.
    pub histogram: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub deadline: f64,
    /// Weight of the count term; `1 - alpha` weighs diversity.
    pub alpha: f64,
    pub candidates: Vec<Candidate>,
    /// Reference distribution; the pooled histogram of all candidates when absent.
    pub global: Option<Vec<f64>>,
}

fn normalized(h: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = h.iter().sum();
    (s > 0.0).then(|| h.iter().map(|x| x / s).collect())
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let (Some(p), Some(q)) = (normalized(p), normalized(q)) else {
        return 1.0;
    };
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).clamp(0.0, 1.0)
}

impl SelectionConfig {
    fn validate(&self) -> Result<Vec<f64>> {
        if self.candidates.is_empty() {
            return Err(Error::config("client selection needs at least one candidate"));
        }
        if !(self.deadline > 0.0) {
            return Err(Error::config(format!("deadline must be > 0, got {}", self.deadline)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        let k = self.candidates[0].histogram.len();
        for c in &self.candidates {
            if c.histogram.len() != k || c.histogram.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::config(format!("client {}: histogram must have {k} non-negative entries", c.id)));
            }
        }
        let global = match &self.global {
            Some(g) if g.len() == k => g.clone(),
            Some(g) => return Err(Error::config(format!("global histogram has {} entries, expected {k}", g.len()))),
            None => (0..k).map(|i| self.candidates.iter().map(|c| c.histogram[i]).sum()).collect(),
        };
        if normalized(&global).is_none() {
            return Err(Error::config("global histogram is empty"));
        }
        Ok(global)
    }
}

fn score(cfg: &SelectionConfig, global: &[f64], members: &[usize]) -> f64 {
    let k = global.len();
    let mut pooled = vec![0.0; k];
    for &i in members {
        for (p, h) in pooled.iter_mut().zip(&cfg.candidates[i].histogram) {
            *p += h;
        }
    }
    let n = cfg.candidates.len() as f64;
    cfg.alpha * members.len() as f64 / n + (1.0 - cfg.alpha) * (1.0 - js_divergence(&pooled, global))
}

/// Score of the candidates at positions `members`.
pub fn selection_score(cfg: &SelectionConfig, members: &[usize]) -> Result<f64> {
    let global = cfg.validate()?;
    Ok(score(cfg, &global, members))
}

/// Greedy selection among deadline-feasible candidates: repeatedly add the
/// candidate that raises the score most, while it strictly improves. Ties go
/// to the lower id. Returns candidate ids in ascending order.
pub fn select_clients(cfg: &SelectionConfig) -> Result<Vec<usize>> {
    let global = cfg.validate()?;
    let mut pool: Vec<usize> = (0..cfg.candidates.len())
        .filter(|&i| cfg.candidates[i].latency <= cfg.deadline)
        .collect();
    pool.sort_by_key(|&i| cfg.candidates[i].id);
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = score(cfg, &global, &chosen);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for &i in pool.iter().filter(|i| !chosen.contains(i)) {
            let mut trial = chosen.clone();
            trial.push(i);
            let s = score(cfg, &global, &trial);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s > current => {
                chosen.push(i);
                current = s;
            }
            _ => break,
        }
    }
    let mut ids: Vec<usize> = chosen.iter().map(|&i| cfg.candidates[i].id).collect();
    ids.sort_unstable();
    Ok(ids)
}
