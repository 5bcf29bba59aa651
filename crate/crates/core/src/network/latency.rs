use serde::Serialize;

use super::topology::{Allocation, Topology};
use crate::compression::{CompressionSpec, WireFormat};
use crate::nn::{bytes_of, ModelProfile};
use crate::protocols::{epsl_group, ClientTiming, Node, ProtocolConfig, ProtocolKind, VisitOrder, LABEL_BITS};
use crate::{Error, Result};

/// Work done in one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Work {
    Cycles(f64),
    Bytes(u64),
}

/// `cycles / compute_rate` or `bytes * 8 / link_rate`. Infinite resources
/// take no time.
pub fn phase_latency(work: Work, resource: f64) -> Result<f64> {
    if !(resource > 0.0) {
        return Err(Error::Infeasible(format!("phase needs a resource > 0, got {resource}")));
    }
    match work {
        Work::Cycles(c) if c >= 0.0 && c.is_finite() => Ok(c / resource),
        Work::Cycles(c) => Err(Error::config(format!("cycles must be finite and >= 0, got {c}"))),
        Work::Bytes(b) => Ok(b as f64 * 8.0 / resource),
    }
}

fn cycles_time(cycles: f64, rate: f64) -> Result<f64> {
    if cycles == 0.0 {
        Ok(0.0)
    } else {
        phase_latency(Work::Cycles(cycles), rate)
    }
}

fn bytes_time(bytes: u64, rate: f64) -> Result<f64> {
    if bytes == 0 {
        Ok(0.0)
    } else {
        phase_latency(Work::Bytes(bytes), rate)
    }
}

/// What one round of training looks like: protocol, model and samples per
/// client (`samples[m] / batch_size` lock-step batches for client `m`).
#[derive(Debug, Clone, Copy)]
pub struct RoundSpec<'a> {
    pub cfg: &'a ProtocolConfig,
    pub profile: &'a ModelProfile,
    pub samples: &'a [usize],
    pub round: usize,
}

impl RoundSpec<'_> {
    pub fn clients(&self) -> usize {
        self.samples.len()
    }

    pub(crate) fn steps(&self) -> Result<Vec<usize>> {
        self.cfg.validate(self.profile.len(), self.samples.len())?;
        let b = self.cfg.batch_size;
        self.samples
            .iter()
            .enumerate()
            .map(|(m, &n)| {
                if n < b {
                    Err(Error::config(format!("client {m} has {n} samples, fewer than batch size {b}")))
                } else {
                    Ok(n / b)
                }
            })
            .collect()
    }

    /// Wire bytes (header included) of one smashed payload at layer boundary `cut`.
    pub(crate) fn smashed_bytes(&self, cut: usize) -> u64 {
        smashed_wire(&self.cfg.compression, self.cfg.batch_size, self.profile.cut_shape(cut))
    }

    pub(crate) fn label_bytes(&self) -> u64 {
        bytes_of(&[self.cfg.batch_size], LABEL_BITS)
    }
}

/// Wire bytes of a model upload or download of `params` values.
pub(crate) fn model_wire(params: usize, bits: u32) -> u64 {
    let format = WireFormat::Dense { bits };
    format.payload_bytes(&[params]) + format.header_bytes()
}

pub(crate) fn smashed_wire(spec: &CompressionSpec, batch: usize, sample_shape: &[usize]) -> u64 {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample_shape);
    let format = spec.wire_format(shape.iter().product());
    format.payload_bytes(&shape) + format.header_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseTime {
    pub name: &'static str,
    pub seconds: f64,
}

/// One client's own time over the round, summed per resource.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClientPath {
    pub compute: f64,
    pub uplink: f64,
    pub server: f64,
    pub downlink: f64,
}

impl ClientPath {
    pub fn total(&self) -> f64 {
        self.compute + self.uplink + self.server + self.downlink
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    /// Round time per phase, summed over lock-step batches.
    pub phases: Vec<PhaseTime>,
    pub clients: Vec<ClientPath>,
    pub total: f64,
    /// Client with the longest own path; ties go to the lower index.
    pub straggler: Option<usize>,
}

impl LatencyBreakdown {
    pub fn phase(&self, name: &str) -> f64 {
        self.phases.iter().filter(|p| p.name == name).map(|p| p.seconds).sum()
    }
}

struct Acc {
    phases: Vec<PhaseTime>,
    clients: Vec<ClientPath>,
}

impl Acc {
    fn new(m: usize) -> Self {
        Self {
            phases: Vec::new(),
            clients: vec![ClientPath::default(); m],
        }
    }

    fn add(&mut self, name: &'static str, seconds: f64) {
        match self.phases.iter_mut().find(|p| p.name == name) {
            Some(p) => p.seconds += seconds,
            None => self.phases.push(PhaseTime { name, seconds }),
        }
    }

    fn finish(self) -> LatencyBreakdown {
        let total = self.phases.iter().map(|p| p.seconds).sum();
        let mut straggler = None;
        let mut worst = f64::NEG_INFINITY;
        for (m, c) in self.clients.iter().enumerate() {
            if c.total() > worst {
                worst = c.total();
                straggler = Some(m);
            }
        }
        LatencyBreakdown {
            phases: self.phases,
            clients: self.clients,
            total,
            straggler,
        }
    }
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

/// Link rates and compute rates seen by the clients under an allocation.
struct Rates<'a> {
    topo: &'a Topology,
    alloc: &'a Allocation,
    server: f64,
    /// One client at a time owns every pool (vanilla SL).
    exclusive: bool,
}

impl<'a> Rates<'a> {
    fn new(topo: &'a Topology, alloc: &'a Allocation, exclusive: bool) -> Result<Self> {
        Ok(Self {
            topo,
            alloc,
            server: topo.server()?.compute_rate,
            exclusive,
        })
    }

    fn client(&self, m: usize) -> Result<f64> {
        self.topo.client_rate(m)
    }

    /// Rate between client `m` and `hub` in the given direction.
    fn link(&self, m: usize, hub: Node, upward: bool) -> Result<f64> {
        if let Some(p) = self.topo.pool {
            let hz = if self.exclusive {
                p.total_hz
            } else if upward {
                self.alloc.uplink_hz[m]
            } else {
                self.alloc.downlink_hz[m]
            };
            return Ok(hz * p.spectral_efficiency);
        }
        let c = format!("client{m}");
        let h = self.topo.resolve(hub)?;
        let (src, dst) = if upward { (&c, &h) } else { (&h, &c) };
        self.topo
            .link(src, dst)
            .ok_or_else(|| Error::topology(format!("no link {src} -> {dst}")))
    }

    fn up(&self, m: usize) -> Result<f64> {
        self.link(m, Node::Server, true)
    }

    fn down(&self, m: usize) -> Result<f64> {
        self.link(m, Node::Server, false)
    }

    /// One transmission heard by all `members`: their pooled downlink
    /// spectrum, or the slowest member's explicit link.
    fn broadcast(&self, members: &[usize]) -> Result<f64> {
        if let Some(p) = self.topo.pool {
            return Ok(members.iter().map(|&m| self.alloc.downlink_hz[m]).sum::<f64>() * p.spectral_efficiency);
        }
        let mut rate = f64::INFINITY;
        for &m in members {
            rate = rate.min(self.down(m)?);
        }
        Ok(rate)
    }

    fn server_share(&self, members: &[usize]) -> f64 {
        if self.exclusive {
            self.server
        } else {
            members.iter().map(|&m| self.alloc.server_share[m]).sum::<f64>() * self.server
        }
    }
}

/// Lock-step latency of one round.
pub fn round_latency(spec: &RoundSpec, topo: &Topology, alloc: &Allocation) -> Result<LatencyBreakdown> {
    let steps = spec.steps()?;
    let m = spec.clients();
    alloc.validate(topo, m)?;
    let cfg = spec.cfg;
    match cfg.kind {
        ProtocolKind::Fedavg => fedavg(spec, &Rates::new(topo, alloc, false)?, &steps),
        ProtocolKind::VanillaSl => vanilla(spec, &Rates::new(topo, alloc, true)?, &steps),
        ProtocolKind::Ushaped => ushaped(spec, &Rates::new(topo, alloc, false)?, &steps),
        ProtocolKind::Psl | ProtocolKind::Sfl | ProtocolKind::Epsl => {
            let group = epsl_group(cfg, m, spec.round);
            let rates = Rates::new(topo, alloc, false)?;
            let mut acc = parallel(spec, &rates, &steps, &group)?;
            if cfg.sfl_averages(spec.round) {
                sfl_sync(spec, &rates, &mut acc)?;
            }
            Ok(acc.finish())
        }
        ProtocolKind::AsyncPsl if cfg.async_quorum == m => {
            Ok(parallel(spec, &Rates::new(topo, alloc, false)?, &steps, &[])?.finish())
        }
        ProtocolKind::AsyncPsl => Err(Error::Unsupported(format!(
            "lock-step latency of asynchronous PSL with quorum {} < {m} clients depends on event timing; use the engine's simulated time",
            cfg.async_quorum
        ))),
    }
}

struct Split {
    fwd: Vec<f64>,
    bwd: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
}

fn split_terms(spec: &RoundSpec, rates: &Rates) -> Result<Split> {
    let (cut, b) = (spec.cfg.cut, spec.cfg.batch_size as f64);
    let act = spec.smashed_bytes(cut);
    let mut s = Split {
        fwd: Vec::new(),
        bwd: Vec::new(),
        up: Vec::new(),
        down: Vec::new(),
    };
    for m in 0..spec.clients() {
        let f = rates.client(m)?;
        s.fwd.push(cycles_time(b * spec.profile.fwd_cycles(0, cut), f)?);
        s.bwd.push(cycles_time(b * spec.profile.bwd_cycles(0, cut), f)?);
        s.up.push(bytes_time(act + spec.label_bytes(), rates.up(m)?)?);
        s.down.push(bytes_time(act, rates.down(m)?)?);
    }
    Ok(s)
}

fn parallel(spec: &RoundSpec, rates: &Rates, steps: &[usize], group: &[usize]) -> Result<Acc> {
    let (cut, l, b) = (spec.cfg.cut, spec.profile.len(), spec.cfg.batch_size as f64);
    let terms = split_terms(spec, rates)?;
    let act = spec.smashed_bytes(cut);
    let (sf, sb) = (b * spec.profile.fwd_cycles(cut, l), b * spec.profile.bwd_cycles(cut, l));
    let mut acc = Acc::new(spec.clients());
    for s in 0..steps.iter().copied().max().unwrap_or(0) {
        let part: Vec<usize> = (0..steps.len()).filter(|&m| steps[m] > s).collect();
        let (grouped, single): (Vec<usize>, Vec<usize>) = part.iter().partition(|m| group.contains(m));

        acc.add("forward", max_of(part.iter().map(|&m| terms.fwd[m] + terms.up[m])));
        let mut server = Vec::new();
        let mut down = Vec::new();
        for &m in &single {
            server.push((m, cycles_time(sf + sb, rates.server_share(&[m]))?));
            down.push((m, terms.down[m]));
        }
        if !grouped.is_empty() {
            let t = cycles_time(grouped.len() as f64 * sf + sb, rates.server_share(&grouped))?;
            let bc = bytes_time(act, rates.broadcast(&grouped)?)?;
            for &m in &grouped {
                server.push((m, t));
                down.push((m, bc));
            }
        }
        acc.add("server", max_of(server.iter().map(|x| x.1)));
        acc.add("backward", max_of(down.iter().map(|&(m, d)| d + terms.bwd[m])));
        for &m in &part {
            let c = &mut acc.clients[m];
            c.compute += terms.fwd[m] + terms.bwd[m];
            c.uplink += terms.up[m];
        }
        for (m, t) in server {
            acc.clients[m].server += t;
        }
        for (m, d) in down {
            acc.clients[m].downlink += d;
        }
    }
    Ok(acc)
}

fn sfl_sync(spec: &RoundSpec, rates: &Rates, acc: &mut Acc) -> Result<()> {
    let bytes = model_wire(spec.profile.param_count(0, spec.cfg.cut), spec.cfg.compression.client_weight_bits);
    let mut up = Vec::new();
    let mut down = Vec::new();
    for m in 0..spec.clients() {
        up.push(bytes_time(bytes, rates.link(m, Node::Fed, true)?)?);
        down.push(bytes_time(bytes, rates.link(m, Node::Fed, false)?)?);
        acc.clients[m].uplink += up[m];
        acc.clients[m].downlink += down[m];
    }
    acc.add("sync", max_of(up.into_iter()) + max_of(down.into_iter()));
    Ok(())
}

fn fedavg(spec: &RoundSpec, rates: &Rates, steps: &[usize]) -> Result<LatencyBreakdown> {
    let (l, b) = (spec.profile.len(), spec.cfg.batch_size as f64);
    let p = spec.profile.param_count(0, l);
    let comp = &spec.cfg.compression;
    let (down_bytes, up_bytes) = (model_wire(p, comp.server_weight_bits), model_wire(p, comp.client_weight_bits));
    let per_sample = spec.profile.fwd_cycles(0, l) + spec.profile.bwd_cycles(0, l);
    let mut acc = Acc::new(spec.clients());
    let (mut down, mut local, mut up) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..spec.clients() {
        down.push(bytes_time(down_bytes, rates.down(m)?)?);
        local.push(cycles_time(steps[m] as f64 * b * per_sample, rates.client(m)?)?);
        up.push(bytes_time(up_bytes, rates.up(m)?)?);
        let c = &mut acc.clients[m];
        c.downlink += down[m];
        c.compute += local[m];
        c.uplink += up[m];
    }
    acc.add("download", max_of(down.into_iter()));
    acc.add("local", max_of(local.into_iter()));
    acc.add("upload", max_of(up.into_iter()));
    Ok(acc.finish())
}

fn vanilla(spec: &RoundSpec, rates: &Rates, steps: &[usize]) -> Result<LatencyBreakdown> {
    let (cut, l, b) = (spec.cfg.cut, spec.profile.len(), spec.cfg.batch_size as f64);
    let terms = split_terms(spec, rates)?;
    let server = cycles_time(b * (spec.profile.fwd_cycles(cut, l) + spec.profile.bwd_cycles(cut, l)), rates.server)?;
    let model = model_wire(spec.profile.param_count(0, cut), spec.cfg.compression.client_weight_bits);
    let order = VisitOrder::new(spec.cfg.seed, spec.clients()).order().to_vec();
    let mut prev = if spec.round == 0 { None } else { order.last().copied() };
    let mut acc = Acc::new(spec.clients());
    for &m in &order {
        if let Some(p) = prev.filter(|&p| p != m) {
            let up = bytes_time(model, rates.up(p)?)?;
            let down = bytes_time(model, rates.down(m)?)?;
            acc.clients[p].uplink += up;
            acc.clients[m].downlink += down;
            acc.add("relay", up + down);
        }
        let n = steps[m] as f64;
        acc.add("forward", n * (terms.fwd[m] + terms.up[m]));
        acc.add("server", n * server);
        acc.add("backward", n * (terms.down[m] + terms.bwd[m]));
        let c = &mut acc.clients[m];
        c.compute += n * (terms.fwd[m] + terms.bwd[m]);
        c.uplink += n * terms.up[m];
        c.server += n * server;
        c.downlink += n * terms.down[m];
        prev = Some(m);
    }
    Ok(acc.finish())
}

fn ushaped(spec: &RoundSpec, rates: &Rates, steps: &[usize]) -> Result<LatencyBreakdown> {
    let cfg = spec.cfg;
    let (c1, c2, l, b) = (cfg.cut, cfg.cut2.expect("validated"), spec.profile.len(), cfg.batch_size as f64);
    let p = spec.profile;
    let (a1, a2) = (spec.smashed_bytes(c1), spec.smashed_bytes(c2));
    let (sf, sb) = (b * p.fwd_cycles(c1, c2), b * p.bwd_cycles(c1, c2));
    let mut acc = Acc::new(spec.clients());
    for s in 0..steps.iter().copied().max().unwrap_or(0) {
        let part: Vec<usize> = (0..steps.len()).filter(|&m| steps[m] > s).collect();
        let mut ph = [0.0f64; 5];
        for &m in &part {
            let f = rates.client(m)?;
            let head_f = cycles_time(b * p.fwd_cycles(0, c1), f)?;
            let head_b = cycles_time(b * p.bwd_cycles(0, c1), f)?;
            let tail = cycles_time(b * (p.fwd_cycles(c2, l) + p.bwd_cycles(c2, l)), f)?;
            let (up, down) = (rates.up(m)?, rates.down(m)?);
            let (act_up, act_down) = (bytes_time(a1, up)?, bytes_time(a2, down)?);
            let (grad_up, grad_down) = (bytes_time(a2, up)?, bytes_time(a1, down)?);
            let share = rates.server_share(&[m]);
            let (srv_f, srv_b) = (cycles_time(sf, share)?, cycles_time(sb, share)?);
            let terms = [head_f + act_up, srv_f, act_down + tail + grad_up, srv_b, grad_down + head_b];
            for (x, t) in ph.iter_mut().zip(terms) {
                *x = x.max(t);
            }
            let c = &mut acc.clients[m];
            c.compute += head_f + tail + head_b;
            c.uplink += act_up + grad_up;
            c.server += srv_f + srv_b;
            c.downlink += act_down + grad_down;
        }
        for (name, t) in ["forward", "server_forward", "tail", "server_backward", "backward"].into_iter().zip(ph) {
            acc.add(name, t);
        }
    }
    Ok(acc.finish())
}

/// Per-batch phase durations of each client, as consumed by the asynchronous
/// engine.
pub fn client_timings(spec: &RoundSpec, topo: &Topology, alloc: &Allocation) -> Result<Vec<ClientTiming>> {
    spec.steps()?;
    alloc.validate(topo, spec.clients())?;
    let rates = Rates::new(topo, alloc, false)?;
    let terms = split_terms(spec, &rates)?;
    let (cut, l, b) = (spec.cfg.cut, spec.profile.len(), spec.cfg.batch_size as f64);
    let server = b * (spec.profile.fwd_cycles(cut, l) + spec.profile.bwd_cycles(cut, l));
    (0..spec.clients())
        .map(|m| {
            Ok(ClientTiming {
                fwd: terms.fwd[m],
                up: terms.up[m],
                server: cycles_time(server, rates.server_share(&[m]))?,
                down: terms.down[m],
                bwd: terms.bwd[m],
            })
        })
        .collect()
}
