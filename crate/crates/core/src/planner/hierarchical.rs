//! Two-cut placement over a client -> edge -> cloud chain.

use super::plan::{PlanSegment, SplitPlan};
use crate::compression::CompressionSpec;
use crate::network::{NodeSpec, Tier, Topology};
use crate::nn::ModelProfile;
use crate::protocols::LABEL_BITS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct HierarchyProblem<'a> {
    pub profile: &'a ModelProfile,
    /// Client nodes `client0..`, exactly one edge node and one cloud node.
    /// Client links come from the shared pool split equally, or from explicit
    /// client/edge links.
    pub topology: &'a Topology,
    /// Samples per client; each round is one epoch of `samples / batch_size`
    /// lock-step batches.
    pub samples: &'a [usize],
    pub batch_size: usize,
    pub compression: CompressionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalPlan {
    pub cut1: usize,
    pub cut2: usize,
    /// Seconds per round.
    pub latency: f64,
    pub plan: SplitPlan,
    /// Best plan with an empty cloud segment: `(cut1, latency)`.
    pub user_edge: (usize, f64),
    /// Best plan with an empty edge segment: `(cut1, latency)`.
    pub user_cloud: (usize, f64),
}

struct Chain<'a> {
    edge: &'a NodeSpec,
    cloud: &'a NodeSpec,
    clients: Vec<&'a NodeSpec>,
    up: Vec<f64>,
    down: Vec<f64>,
    edge_cloud: f64,
    cloud_edge: f64,
}

fn single<'a>(topo: &'a Topology, tier: Tier) -> Result<&'a NodeSpec> {
    match topo.nodes_of(tier).as_slice() {
        [n] => Ok(n),
        other => Err(Error::topology(format!(
            "hierarchical planning needs exactly one {tier:?} node, found {}",
            other.len()
        ))),
    }
}

fn chain<'a>(p: &HierarchyProblem<'a>) -> Result<Chain<'a>> {
    let topo = p.topology;
    let edge = single(topo, Tier::Edge)?;
    let cloud = single(topo, Tier::Cloud)?;
    let m = p.samples.len();
    if m == 0 {
        return Err(Error::config("hierarchical planning needs at least one client"));
    }
    let mut clients = Vec::with_capacity(m);
    let (mut up, mut down) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for i in 0..m {
        let id = format!("client{i}");
        let node = topo.node(&id).ok_or_else(|| Error::topology(format!("no node {id}")))?;
        clients.push(node);
        match topo.pool {
            Some(pool) => {
                let r = pool.total_hz / m as f64 * pool.spectral_efficiency;
                up.push(r);
                down.push(r);
            }
            None => {
                let link = |a: &str, b: &str| topo.link(a, b).ok_or_else(|| Error::topology(format!("no link {a} -> {b}")));
                up.push(link(&id, &edge.id)?);
                down.push(link(&edge.id, &id)?);
            }
        }
    }
    let edge_cloud = topo
        .link(&edge.id, &cloud.id)
        .ok_or_else(|| Error::topology(format!("no link {} -> {}", edge.id, cloud.id)))?;
    let cloud_edge = topo
        .link(&cloud.id, &edge.id)
        .ok_or_else(|| Error::topology(format!("no link {} -> {}", cloud.id, edge.id)))?;
    Ok(Chain {
        edge,
        cloud,
        clients,
        up,
        down,
        edge_cloud,
        cloud_edge,
    })
}

fn wire_bits(spec: &CompressionSpec, batch: usize, sample: &[usize]) -> f64 {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample);
    let f = spec.wire_format(shape.iter().product());
    ((f.payload_bytes(&shape) + f.header_bytes()) * 8) as f64
}

fn latency_on(p: &HierarchyProblem, c: &Chain, l1: usize, l2: usize) -> Result<f64> {
    let (prof, b) = (p.profile, p.batch_size);
    let l = prof.len();
    if !(l1 <= l2 && l2 <= l) {
        return Err(Error::config(format!("cuts must satisfy 0 <= {l1} <= {l2} <= {l}")));
    }
    if b == 0 || p.samples.iter().any(|&n| n < b) {
        return Err(Error::config(format!("every client needs at least batch_size={b} samples")));
    }
    let bf = b as f64;
    let labels = (b as u64 * LABEL_BITS as u64) as f64;
    let a1 = wire_bits(&p.compression, b, prof.cut_shape(l1));
    let a2 = wire_bits(&p.compression, b, prof.cut_shape(l2));
    let cloud_used = l2 < l;
    let steps: Vec<usize> = p.samples.iter().map(|&n| n / b).collect();
    let mut total = 0.0;
    for s in 0..steps.iter().copied().max().unwrap_or(0) {
        let part: Vec<usize> = (0..steps.len()).filter(|&m| steps[m] > s).collect();
        let k = part.len() as f64;
        let mut up_phase: f64 = 0.0;
        let mut down_phase: f64 = 0.0;
        for &m in &part {
            let f = c.clients[m].compute_rate;
            up_phase = up_phase.max(bf * prof.fwd_cycles(0, l1) / f + (a1 + labels) / c.up[m]);
            down_phase = down_phase.max(a1 / c.down[m] + bf * prof.bwd_cycles(0, l1) / f);
        }
        let edge_fwd = k * bf * prof.fwd_cycles(l1, l2) / c.edge.compute_rate;
        let edge_bwd = k * bf * prof.bwd_cycles(l1, l2) / c.edge.compute_rate;
        let (to_cloud, cloud, to_edge) = if cloud_used {
            (
                k * (a2 + labels) / c.edge_cloud,
                k * bf * (prof.fwd_cycles(l2, l) + prof.bwd_cycles(l2, l)) / c.cloud.compute_rate,
                k * a2 / c.cloud_edge,
            )
        } else {
            (0.0, 0.0, 0.0)
        };
        total += up_phase + edge_fwd + to_cloud + cloud + to_edge + edge_bwd + down_phase;
    }
    Ok(total)
}

/// Round latency of the plan that keeps `0..l1` on clients, `l1..l2` on the
/// edge and `l2..L` in the cloud. Every phase is lock-step; the edge and the
/// cloud process all participating clients back to back and the edge-cloud
/// link carries all their payloads.
pub fn hierarchical_latency(p: &HierarchyProblem, l1: usize, l2: usize) -> Result<f64> {
    latency_on(p, &chain(p)?, l1, l2)
}

fn better(t: f64, best: Option<f64>) -> bool {
    best.is_none_or(|b| t < b * (1.0 - 1e-12))
}

/// Enumerates every `0 <= l1 <= l2 <= L`. For each `l1` the two degenerate
/// plans are tried first (`l2 = l1`, then `l2 = L`), so among equal
/// latencies a plan that leaves a tier unused wins.
pub fn plan_hierarchical(p: &HierarchyProblem) -> Result<HierarchicalPlan> {
    let c = chain(p)?;
    let l = p.profile.len();
    let mut best: Option<(usize, usize, f64)> = None;
    let mut user_edge: Option<(usize, f64)> = None;
    let mut user_cloud: Option<(usize, f64)> = None;
    for l1 in 0..=l {
        let mut order = vec![l1];
        if l != l1 {
            order.push(l);
        }
        order.extend(l1 + 1..l);
        for l2 in order {
            let t = latency_on(p, &c, l1, l2)?;
            if better(t, best.map(|b| b.2)) {
                best = Some((l1, l2, t));
            }
            if l2 == l && better(t, user_edge.map(|u| u.1)) {
                user_edge = Some((l1, t));
            }
            if l2 == l1 && better(t, user_cloud.map(|u| u.1)) {
                user_cloud = Some((l1, t));
            }
        }
    }
    let (cut1, cut2, latency) = best.expect("at least one plan");
    let seg = |node: &str, start, end| PlanSegment {
        node: node.to_string(),
        start,
        end,
    };
    let plan = SplitPlan::new(
        vec![seg("client", 0, cut1), seg(&c.edge.id, cut1, cut2), seg(&c.cloud.id, cut2, l)],
        l,
    )?;
    Ok(HierarchicalPlan {
        cut1,
        cut2,
        latency,
        plan,
        user_edge: user_edge.expect("l2 = L is always tried"),
        user_cloud: user_cloud.expect("l2 = l1 is always tried"),
    })
}
