//! Joint model splitting and routing over a multi-hop mesh.
//!
//! A route is a walk `(node_0, end_0), (node_1, end_1), ...` where `node_i`
//! computes layers `end_{i-1}..end_i` and forwards the activation at
//! `end_{i-1}` over the direct link from `node_{i-1}`. The source may compute
//! nothing; every later node computes at least one layer, and the walk ends
//! at a destination with all layers done. Nodes may be revisited, each visit
//! checked against the node's memory on its own.

use super::plan::{PlanSegment, SplitPlan};
use crate::network::Topology;
use crate::nn::{bytes_of, ModelProfile};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RouteProblem<'a> {
    pub profile: &'a ModelProfile,
    pub topology: &'a Topology,
    pub source: String,
    pub destinations: Vec<String>,
    pub batch_size: usize,
}

/// Step of a route: node index into the topology and the layer it ends at.
pub type Hop = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub hops: Vec<Hop>,
    /// Forward plus backward seconds for one batch.
    pub cost: f64,
    pub plan: SplitPlan,
}

impl RouteProblem<'_> {
    pub(crate) fn indices(&self) -> Result<(usize, Vec<usize>)> {
        let find = |id: &str| {
            self.topology
                .index_of(id)
                .ok_or_else(|| Error::topology(format!("unknown node {id:?}")))
        };
        if self.destinations.is_empty() {
            return Err(Error::config("route needs at least one destination"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        let dests = self.destinations.iter().map(|d| find(d)).collect::<Result<Vec<_>>>()?;
        Ok((find(&self.source)?, dests))
    }

    /// Seconds for node `v` to run layers `a..b` forward and backward, or
    /// `None` when they do not fit in its memory.
    pub fn segment_cost(&self, v: usize, a: usize, b: usize) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        let node = &self.topology.nodes[v];
        if self.profile.memory_bytes(a, b, self.batch_size) > node.memory_bytes {
            return None;
        }
        let cycles = self.batch_size as f64 * (self.profile.fwd_cycles(a, b) + self.profile.bwd_cycles(a, b));
        Some(cycles / node.compute_rate)
    }

    /// Seconds to send the activation at `cut` over `u -> v` and its gradient
    /// back, or `None` without a direct link.
    pub fn transfer_cost(&self, u: usize, v: usize, cut: usize) -> Option<f64> {
        let (a, b) = (&self.topology.nodes[u].id, &self.topology.nodes[v].id);
        let rate = self.topology.link(a, b)?;
        let mut shape = vec![self.batch_size];
        shape.extend_from_slice(self.profile.cut_shape(cut));
        Some(2.0 * bytes_of(&shape, 32) as f64 * 8.0 / rate)
    }

    pub(crate) fn plan_of(&self, hops: &[Hop]) -> Result<SplitPlan> {
        let mut start = 0;
        let segments = hops
            .iter()
            .map(|&(v, end)| {
                let s = PlanSegment {
                    node: self.topology.nodes[v].id.clone(),
                    start,
                    end,
                };
                start = end;
                s
            })
            .collect();
        SplitPlan::new(segments, self.profile.len())
    }

    fn infeasible(&self, source: usize, dests: &[usize]) -> Error {
        let nodes = &self.topology.nodes;
        let mut tightest: Option<(u64, usize, u64)> = None;
        for i in 0..self.profile.len() {
            let need = self.profile.memory_bytes(i, i + 1, self.batch_size);
            let have = nodes.iter().map(|n| n.memory_bytes).max().unwrap_or(0);
            if need > have && tightest.is_none_or(|t| need - have > t.0) {
                tightest = Some((need - have, i, need));
            }
        }
        let names: Vec<&str> = dests.iter().map(|&d| nodes[d].id.as_str()).collect();
        match tightest {
            Some((_, layer, need)) => Error::Infeasible(format!(
                "layer {layer} needs {need} bytes but no node has that much memory (largest: {} bytes)",
                nodes.iter().map(|n| n.memory_bytes).max().unwrap_or(0)
            )),
            None => Error::Infeasible(format!(
                "no memory-feasible route from {} to {names:?}: every layer fits somewhere, but no chain of linked nodes can hold consecutive ranges",
                nodes[source].id
            )),
        }
    }
}

/// Best cost and hop sequence per `(node, layers completed)` state.
#[derive(Debug, Clone)]
pub struct MultihopTable {
    best: Vec<Vec<Option<(f64, Vec<Hop>)>>>,
}

impl MultihopTable {
    pub fn state(&self, node: usize, layers: usize) -> Option<(f64, &[Hop])> {
        self.best.get(node)?.get(layers)?.as_ref().map(|(c, h)| (*c, h.as_slice()))
    }
}

fn improves(cost: f64, hops: &[Hop], cur: &Option<(f64, Vec<Hop>)>) -> bool {
    match cur {
        None => true,
        Some((c, h)) => cost < *c || (cost == *c && hops < h.as_slice()),
    }
}

/// Fills the dynamic-programming table over `(node, layers completed)`.
pub fn multihop_table(p: &RouteProblem) -> Result<MultihopTable> {
    let (source, _) = p.indices()?;
    let l = p.profile.len();
    let n = p.topology.nodes.len();
    let mut best: Vec<Vec<Option<(f64, Vec<Hop>)>>> = vec![vec![None; l + 1]; n];
    for end in 0..=l {
        if let Some(c) = p.segment_cost(source, 0, end) {
            best[source][end] = Some((c, vec![(source, end)]));
        }
    }
    for from in 0..l {
        for u in 0..n {
            let Some((base, hops)) = best[u][from].clone() else { continue };
            for v in 0..n {
                if v == u {
                    continue;
                }
                let Some(t) = p.transfer_cost(u, v, from) else { continue };
                for to in from + 1..=l {
                    let Some(c) = p.segment_cost(v, from, to) else { continue };
                    let cost = (base + t) + c;
                    let mut next = hops.clone();
                    next.push((v, to));
                    if improves(cost, &next, &best[v][to]) {
                        best[v][to] = Some((cost, next));
                    }
                }
            }
        }
    }
    Ok(MultihopTable { best })
}

/// Cheapest route from the source to any destination; ties go to the
/// lexicographically smallest hop sequence.
pub fn route_multihop(p: &RouteProblem) -> Result<Route> {
    let (source, dests) = p.indices()?;
    let l = p.profile.len();
    let table = multihop_table(p)?;
    let mut best: Option<(f64, Vec<Hop>)> = None;
    for &d in &dests {
        if let Some((c, h)) = table.state(d, l) {
            if improves(c, h, &best) {
                best = Some((c, h.to_vec()));
            }
        }
    }
    let (cost, hops) = best.ok_or_else(|| p.infeasible(source, &dests))?;
    Ok(Route {
        plan: p.plan_of(&hops)?,
        hops,
        cost,
    })
}
