//! Min-max allocation of spectrum and server compute for one cut.
//!
//! A lock-step batch step costs `max_m(fwd_m + up_m) + max_m(srv_m) +
//! max_m(down_m + bwd_m)`. The three phases draw on separate pools (uplink
//! spectrum, server cycles, downlink spectrum), so each is minimized on its
//! own. For a target `T` client `m` needs `bits_m / (T - offset_m)` bits/s;
//! the smallest `T` whose requirements fit the pool is found by bisection.

use crate::compression::CompressionSpec;
use crate::network::{Allocation, Topology};
use crate::nn::ModelProfile;
use crate::protocols::{Node, LABEL_BITS};
use crate::{Error, Result};

/// Inputs shared by the single-cut planners.
#[derive(Debug, Clone, Copy)]
pub struct SplitProblem<'a> {
    pub profile: &'a ModelProfile,
    pub topology: &'a Topology,
    pub clients: usize,
    pub batch_size: usize,
    pub compression: CompressionSpec,
}

/// One client's work in one batch step at a given cut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientDemand {
    /// Client forward and backward seconds.
    pub fwd: f64,
    pub bwd: f64,
    pub up_bits: f64,
    pub down_bits: f64,
    pub server_cycles: f64,
    /// Fixed link rates when the topology has no shared pool.
    pub up_rate: Option<f64>,
    pub down_rate: Option<f64>,
}

const TOL: f64 = 1e-9;

fn wire_bits(spec: &CompressionSpec, batch: usize, sample: &[usize]) -> f64 {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample);
    let f = spec.wire_format(shape.iter().product());
    ((f.payload_bytes(&shape) + f.header_bytes()) * 8) as f64
}

/// Per-client demands at `cut`, after checking that every node can hold its
/// segment.
pub fn client_demands(p: &SplitProblem, cut: usize) -> Result<Vec<ClientDemand>> {
    let (profile, topo, b) = (p.profile, p.topology, p.batch_size);
    let l = profile.len();
    profile.check_cut(cut)?;
    if p.clients == 0 || b == 0 {
        return Err(Error::config("need at least one client and a batch size >= 1"));
    }
    let server = topo.server()?;
    let need = profile.memory_bytes(cut, l, b * p.clients);
    if need > server.memory_bytes {
        return Err(Error::Infeasible(format!(
            "server {:?} needs {need} bytes for layers {cut}..{l} but has {}",
            server.id, server.memory_bytes
        )));
    }
    let act = wire_bits(&p.compression, b, profile.cut_shape(cut));
    let labels = (b as u64 * LABEL_BITS as u64) as f64;
    let per_sample_server = profile.fwd_cycles(cut, l) + profile.bwd_cycles(cut, l);
    let mut out = Vec::with_capacity(p.clients);
    for m in 0..p.clients {
        let id = format!("client{m}");
        let node = topo
            .node(&id)
            .ok_or_else(|| Error::topology(format!("no node {id}")))?;
        let need = profile.memory_bytes(0, cut, b);
        if need > node.memory_bytes {
            return Err(Error::Infeasible(format!(
                "{id} needs {need} bytes for layers 0..{cut} but has {}",
                node.memory_bytes
            )));
        }
        let (up_rate, down_rate) = if topo.pool.is_some() {
            (None, None)
        } else {
            let hub = topo.resolve(Node::Server)?;
            let up = topo.link(&id, &hub).ok_or_else(|| Error::topology(format!("no link {id} -> {hub}")))?;
            let down = topo.link(&hub, &id).ok_or_else(|| Error::topology(format!("no link {hub} -> {id}")))?;
            (Some(up), Some(down))
        };
        out.push(ClientDemand {
            fwd: b as f64 * profile.fwd_cycles(0, cut) / node.compute_rate,
            bwd: b as f64 * profile.bwd_cycles(0, cut) / node.compute_rate,
            up_bits: act + labels,
            down_bits: act,
            server_cycles: b as f64 * per_sample_server,
            up_rate,
            down_rate,
        });
    }
    Ok(out)
}

/// Minimizes `max_m(offsets[m] + bits[m] / rate[m])` subject to
/// `sum(rate) <= capacity` (bits/s). Returns the phase time and the rates.
pub fn minmax_link_phase(offsets: &[f64], bits: &[f64], capacity: f64) -> Result<(f64, Vec<f64>)> {
    let floor = offsets.iter().copied().fold(0.0, f64::max);
    let total_bits: f64 = bits.iter().sum();
    if total_bits == 0.0 {
        return Ok((floor, vec![0.0; bits.len()]));
    }
    if !(capacity > 0.0) {
        let worst = (0..bits.len()).max_by(|&a, &b| bits[a].total_cmp(&bits[b]).then(b.cmp(&a))).unwrap_or(0);
        return Err(Error::Infeasible(format!(
            "no link capacity for client {worst}, which must send {} bits",
            bits[worst]
        )));
    }
    if capacity.is_infinite() {
        return Ok((floor, vec![f64::INFINITY; bits.len()]));
    }
    let need = |t: f64| -> f64 {
        offsets
            .iter()
            .zip(bits)
            .map(|(&o, &b)| if b == 0.0 { 0.0 } else if t > o { b / (t - o) } else { f64::INFINITY })
            .sum()
    };
    let mut lo = floor;
    let mut hi = floor + total_bits / capacity;
    while need(hi) > capacity {
        hi = floor + 2.0 * (hi - floor);
    }
    for _ in 0..400 {
        if hi - lo <= TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if need(mid) <= capacity {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let rates: Vec<f64> = offsets
        .iter()
        .zip(bits)
        .map(|(&o, &b)| if b == 0.0 { 0.0 } else { b / (hi - o) })
        .collect();
    let sum: f64 = rates.iter().sum();
    let rates = if sum > capacity { rates.iter().map(|r| r * capacity / sum).collect() } else { rates };
    let achieved = offsets
        .iter()
        .zip(bits)
        .zip(&rates)
        .map(|((&o, &b), &r)| if b == 0.0 { o } else { o + b / r })
        .fold(0.0, f64::max);
    Ok((achieved, rates))
}

/// Allocation and per-step latency at one cut.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxAllocation {
    pub cut: usize,
    pub allocation: Allocation,
    pub uplink_phase: f64,
    pub server_phase: f64,
    pub downlink_phase: f64,
}

impl MinMaxAllocation {
    /// Seconds per lock-step batch step.
    pub fn step_latency(&self) -> f64 {
        self.uplink_phase + self.server_phase + self.downlink_phase
    }
}

fn fixed_phase(offsets: impl Iterator<Item = f64>, bits: &[f64], rates: &[Option<f64>]) -> f64 {
    offsets
        .zip(bits)
        .zip(rates)
        .map(|((o, &b), r)| if b == 0.0 { o } else { o + b / r.expect("fixed rate") })
        .fold(0.0, f64::max)
}

/// Min-max allocation at `cut`.
pub fn allocate_minmax(p: &SplitProblem, cut: usize) -> Result<MinMaxAllocation> {
    let d = client_demands(p, cut)?;
    let m = d.len();
    let fwd: Vec<f64> = d.iter().map(|c| c.fwd).collect();
    let bwd: Vec<f64> = d.iter().map(|c| c.bwd).collect();
    let up_bits: Vec<f64> = d.iter().map(|c| c.up_bits).collect();
    let down_bits: Vec<f64> = d.iter().map(|c| c.down_bits).collect();

    let (uplink_phase, downlink_phase, uplink_hz, downlink_hz) = match p.topology.pool {
        Some(pool) => {
            let cap = pool.total_hz * pool.spectral_efficiency;
            let (tu, ru) = minmax_link_phase(&fwd, &up_bits, cap)?;
            let (td, rd) = minmax_link_phase(&bwd, &down_bits, cap)?;
            let hz = |r: Vec<f64>| r.into_iter().map(|x| x / pool.spectral_efficiency).collect::<Vec<_>>();
            (tu, td, hz(ru), hz(rd))
        }
        None => {
            let ur: Vec<Option<f64>> = d.iter().map(|c| c.up_rate).collect();
            let dr: Vec<Option<f64>> = d.iter().map(|c| c.down_rate).collect();
            (
                fixed_phase(fwd.iter().copied(), &up_bits, &ur),
                fixed_phase(bwd.iter().copied(), &down_bits, &dr),
                vec![0.0; m],
                vec![0.0; m],
            )
        }
    };

    let server_rate = p.topology.server()?.compute_rate;
    let cycles: f64 = d.iter().map(|c| c.server_cycles).sum();
    let (server_phase, server_share) = if cycles == 0.0 {
        (0.0, vec![1.0 / m as f64; m])
    } else {
        let shares: Vec<f64> = d.iter().map(|c| c.server_cycles / cycles).collect();
        let t = d
            .iter()
            .zip(&shares)
            .map(|(c, s)| if c.server_cycles == 0.0 { 0.0 } else { c.server_cycles / (s * server_rate) })
            .fold(0.0, f64::max);
        (t, shares)
    };

    Ok(MinMaxAllocation {
        cut,
        allocation: Allocation {
            uplink_hz,
            downlink_hz,
            server_share,
        },
        uplink_phase,
        server_phase,
        downlink_phase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_clients_get_equal_rates() {
        let (t, r) = minmax_link_phase(&[0.5, 0.5], &[8.0, 8.0], 4.0).unwrap();
        assert!((r[0] - r[1]).abs() < 1e-12);
        assert!((t - 4.5).abs() < 1e-8);
    }

    #[test]
    fn tight_pool_reaches_target() {
        // One client must send 10 bits after 1 s of compute; a 5 bit/s pool
        // gives exactly 3 s.
        let (t, r) = minmax_link_phase(&[1.0], &[10.0], 5.0).unwrap();
        assert!((t - 3.0).abs() <= 3.0 * 1e-9);
        assert!(r[0] <= 5.0);
    }

    #[test]
    fn zero_capacity_names_the_client() {
        let err = minmax_link_phase(&[0.0, 0.0], &[1.0, 9.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("client 1"), "{err}");
    }
}
