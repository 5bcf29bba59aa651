//! Asynchronous parallel split learning.
//!
//! Clients run free: each sends its activations as soon as its previous
//! gradient arrived and it finished the backward pass. The server waits until
//! `K` activations are pending, processes them together in ascending client
//! order with its current weights, and applies one update. With `K = M` every
//! update sees all clients and the run equals lock-step PSL.

use super::client::ClientState;
use super::config::ProtocolConfig;
use super::parallel::{check_canonical, parallel_step};
use super::trace::{RoundOutput, StalenessRecord};
use crate::{Error, Result};

/// Per-batch durations of one client, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientTiming {
    pub fwd: f64,
    pub up: f64,
    pub server: f64,
    pub down: f64,
    pub bwd: f64,
}

impl ClientTiming {
    pub fn cycle(&self) -> f64 {
        self.fwd + self.up + self.server + self.down + self.bwd
    }
}

/// Event state that persists across rounds.
#[derive(Debug, Clone)]
pub struct AsyncPsl {
    timings: Vec<ClientTiming>,
    next_arrival: Vec<f64>,
    start: Vec<f64>,
    plans: Vec<Vec<Vec<usize>>>,
    cursor: Vec<(usize, usize)>,
    update_times: Vec<f64>,
    round_end: f64,
}

impl AsyncPsl {
    pub fn new(timings: Vec<ClientTiming>) -> Result<Self> {
        for (i, t) in timings.iter().enumerate() {
            let parts = [t.fwd, t.up, t.server, t.down, t.bwd];
            if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::config(format!("client {i}: timings must be finite and >= 0, got {t:?}")));
            }
        }
        Ok(Self {
            timings,
            next_arrival: Vec::new(),
            start: Vec::new(),
            plans: Vec::new(),
            cursor: Vec::new(),
            update_times: Vec::new(),
            round_end: 0.0,
        })
    }

    /// Server updates applied so far.
    pub fn version(&self) -> u64 {
        self.update_times.len() as u64
    }

    /// Simulated time at the end of the last round.
    pub fn clock(&self) -> f64 {
        self.round_end
    }

    fn ensure_started(&mut self, clients: &[ClientState], seed: u64) {
        if !self.plans.is_empty() {
            return;
        }
        self.plans = clients.iter().map(|c| c.epoch_batches(seed, 0)).collect();
        self.cursor = vec![(0, 0); clients.len()];
        self.start = vec![0.0; clients.len()];
        self.next_arrival = self.timings.iter().map(|t| t.fwd + t.up).collect();
    }

    fn next_batch(&mut self, client: &ClientState, ci: usize, seed: u64) -> Vec<usize> {
        let (epoch, pos) = &mut self.cursor[ci];
        if *pos == self.plans[ci].len() {
            *epoch += 1;
            *pos = 0;
            self.plans[ci] = client.epoch_batches(seed, *epoch);
        }
        *pos += 1;
        self.plans[ci][*pos - 1].clone()
    }

    /// Pops the earliest arrival, ties broken by client index.
    fn pop_arrival(&mut self) -> (usize, f64) {
        let mut best = 0;
        for i in 1..self.next_arrival.len() {
            if self.next_arrival[i] < self.next_arrival[best] {
                best = i;
            }
        }
        let t = self.next_arrival[best];
        self.next_arrival[best] = f64::INFINITY;
        (best, t)
    }
}

/// One asynchronous round of `ceil(sum_m S_m / K)` server updates, where `S_m`
/// is client `m`'s batches per epoch.
pub fn run_round_async_psl(
    clients: &mut [ClientState],
    server: &mut crate::nn::SegmentState,
    state: &mut AsyncPsl,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_canonical(clients)?;
    let m = clients.len();
    if state.timings.len() != m {
        return Err(Error::config(format!("{} client timings for {m} clients", state.timings.len())));
    }
    let k = cfg.async_quorum;
    if !(1..=m).contains(&k) {
        return Err(Error::config(format!("async_quorum must be in 1..={m}, got {k}")));
    }
    state.ensure_started(clients, cfg.seed);

    let total: usize = clients.iter().map(ClientState::batches_per_epoch).sum();
    let updates = total.div_ceil(k);
    let mut out = RoundOutput::new(round, m);
    let round_start = state.round_end;
    let mut end = round_start;

    for u in 0..updates {
        let mut group = Vec::with_capacity(k);
        let mut now = 0.0;
        while group.len() < k {
            let (ci, t) = state.pop_arrival();
            group.push(ci);
            now = t;
        }
        group.sort_unstable();
        let version = state.version();
        let mut batches = Vec::with_capacity(k);
        for &ci in &group {
            let seen = state.update_times.partition_point(|&x| x <= state.start[ci]) as u64;
            out.staleness.push(StalenessRecord {
                client: clients[ci].id,
                staleness: version - seen,
            });
            batches.push((ci, state.next_batch(&clients[ci], ci, cfg.seed)));
        }
        parallel_step(clients, &batches, server, &[], cfg, u, &mut out)?;
        state.update_times.push(now);
        for &ci in &group {
            let t = state.timings[ci];
            state.start[ci] = now + t.server + t.down + t.bwd;
            state.next_arrival[ci] = state.start[ci] + t.fwd + t.up;
            end = end.max(state.start[ci]);
        }
    }
    state.round_end = end;
    out.sim_time = Some(end - round_start);
    Ok(out)
}
