use serde::{Deserialize, Serialize};

use crate::protocols::Node;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Client,
    Edge,
    Fed,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub tier: Tier,
    /// Cycles per second.
    pub compute_rate: f64,
    #[serde(default = "unlimited")]
    pub memory_bytes: u64,
}

fn unlimited() -> u64 {
    u64::MAX
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, tier: Tier, compute_rate: f64) -> Self {
        Self {
            id: id.into(),
            tier,
            compute_rate,
            memory_bytes: u64::MAX,
        }
    }

    pub fn with_memory(mut self, bytes: u64) -> Self {
        self.memory_bytes = bytes;
        self
    }
}

/// A directed link; `rate` in bits per second, possibly infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub src: String,
    pub dst: String,
    pub rate: f64,
}

/// Wireless spectrum shared by all client uplinks (and, separately, all
/// downlinks). A client's rate is its allocated Hz times the spectral
/// efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedPool {
    pub total_hz: f64,
    #[serde(default = "unit_efficiency")]
    pub spectral_efficiency: f64,
}

fn unit_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub pool: Option<SharedPool>,
}

fn positive(x: f64) -> bool {
    x > 0.0 && !x.is_nan()
}

impl Topology {
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<LinkSpec>, pool: Option<SharedPool>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|o| o.id == n.id) {
                return Err(Error::topology(format!("duplicate node id {:?}", n.id)));
            }
            if !positive(n.compute_rate) {
                return Err(Error::topology(format!("node {:?}: compute_rate must be > 0, got {}", n.id, n.compute_rate)));
            }
            if n.memory_bytes == 0 {
                return Err(Error::topology(format!("node {:?}: memory_bytes must be > 0", n.id)));
            }
        }
        for l in &links {
            for end in [&l.src, &l.dst] {
                if !nodes.iter().any(|n| &n.id == end) {
                    return Err(Error::topology(format!("link {} -> {} references unknown node {end:?}", l.src, l.dst)));
                }
            }
            if l.src == l.dst {
                return Err(Error::topology(format!("self link on {:?}", l.src)));
            }
            if !positive(l.rate) {
                return Err(Error::topology(format!("link {} -> {}: rate must be > 0, got {}", l.src, l.dst, l.rate)));
            }
        }
        if let Some(p) = pool {
            if !positive(p.total_hz) || !p.total_hz.is_finite() || !positive(p.spectral_efficiency) {
                return Err(Error::topology(format!(
                    "shared pool needs finite total_hz > 0 and spectral_efficiency > 0, got {p:?}"
                )));
            }
        }
        Ok(Self { nodes, links, pool })
    }

    /// Clients `client0..` around one edge server plus a fed server. Client
    /// links come from `pool`; without a pool, client links get rate
    /// `link_rate` in both directions (to the server and to the fed node).
    pub fn star(server_rate: f64, client_rates: &[f64], pool: Option<SharedPool>, link_rate: f64) -> Result<Self> {
        let mut nodes = vec![NodeSpec::new("server", Tier::Edge, server_rate), NodeSpec::new("fed", Tier::Fed, server_rate)];
        let mut links = Vec::new();
        for (i, &r) in client_rates.iter().enumerate() {
            let id = format!("client{i}");
            nodes.push(NodeSpec::new(id.clone(), Tier::Client, r));
            if pool.is_none() {
                for hub in ["server", "fed"] {
                    links.push(LinkSpec {
                        src: id.clone(),
                        dst: hub.into(),
                        rate: link_rate,
                    });
                    links.push(LinkSpec {
                        src: hub.into(),
                        dst: id.clone(),
                        rate: link_rate,
                    });
                }
            }
        }
        Topology::new(nodes, links, pool)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Rate of the direct link `src -> dst`.
    pub fn link(&self, src: &str, dst: &str) -> Option<f64> {
        self.links.iter().find(|l| l.src == src && l.dst == dst).map(|l| l.rate)
    }

    pub fn nodes_of(&self, tier: Tier) -> Vec<&NodeSpec> {
        self.nodes.iter().filter(|n| n.tier == tier).collect()
    }

    /// Compute rate of `client{m}`.
    pub fn client_rate(&self, m: usize) -> Result<f64> {
        self.node(&format!("client{m}"))
            .map(|n| n.compute_rate)
            .ok_or_else(|| Error::topology(format!("no node client{m}")))
    }

    /// Node hosting the server-side segment: `server`, else the first edge node.
    pub fn server(&self) -> Result<&NodeSpec> {
        self.node("server")
            .or_else(|| self.nodes.iter().find(|n| n.tier == Tier::Edge))
            .ok_or_else(|| Error::topology("no server node (id \"server\" or tier edge)"))
    }

    /// Topology node id for a trace endpoint.
    pub fn resolve(&self, node: Node) -> Result<String> {
        let id = match node {
            Node::Client(i) => format!("client{i}"),
            Node::Server => self.server()?.id.clone(),
            Node::Fed => self
                .node("fed")
                .or_else(|| self.nodes.iter().find(|n| n.tier == Tier::Fed))
                .ok_or_else(|| Error::topology("no fed node"))?
                .id
                .clone(),
            Node::Broadcast => return Err(Error::topology("broadcast is not a single node")),
        };
        if self.node(&id).is_none() {
            return Err(Error::topology(format!("trace endpoint {node} has no node {id:?}")));
        }
        Ok(id)
    }
}

/// Per-client shares of the uplink and downlink spectrum (Hz) and of the
/// server's compute (fractions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub uplink_hz: Vec<f64>,
    pub downlink_hz: Vec<f64>,
    pub server_share: Vec<f64>,
}

impl Allocation {
    /// Equal split of every pool among `clients`.
    pub fn equal(clients: usize, topo: &Topology) -> Self {
        let hz = topo.pool.map(|p| p.total_hz / clients as f64).unwrap_or(0.0);
        Self {
            uplink_hz: vec![hz; clients],
            downlink_hz: vec![hz; clients],
            server_share: vec![1.0 / clients as f64; clients],
        }
    }

    pub fn clients(&self) -> usize {
        self.server_share.len()
    }

    /// Checks shapes, signs and pool limits (relative slack 1e-9).
    pub fn validate(&self, topo: &Topology, clients: usize) -> Result<()> {
        if self.uplink_hz.len() != clients || self.downlink_hz.len() != clients || self.server_share.len() != clients {
            return Err(Error::Infeasible(format!("allocation does not cover {clients} clients")));
        }
        let all = self.uplink_hz.iter().chain(&self.downlink_hz).chain(&self.server_share);
        if all.clone().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Infeasible("allocation entries must be finite and >= 0".into()));
        }
        let slack = 1.0 + 1e-9;
        if let Some(p) = topo.pool {
            for (name, v) in [("uplink", &self.uplink_hz), ("downlink", &self.downlink_hz)] {
                let sum: f64 = v.iter().sum();
                if sum > p.total_hz * slack {
                    return Err(Error::Infeasible(format!("{name} allocation {sum} Hz exceeds the {} Hz pool", p.total_hz)));
                }
            }
        }
        let share: f64 = self.server_share.iter().sum();
        if share > slack {
            return Err(Error::Infeasible(format!("server shares sum to {share} > 1")));
        }
        Ok(())
    }
}
