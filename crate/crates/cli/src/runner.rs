//! Training runs: data, topology and allocation assembly, the round loop and
//! the persisted per-round trace.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use splitedge::data::{dirichlet_partition, Dataset};
use splitedge::network::{client_timings, comm_volume, round_latency, Allocation, RoundSpec, Topology};
use splitedge::nn::ModelProfile;
use splitedge::planner::{allocate_minmax, SplitProblem};
use splitedge::protocols::{Message, Node, PayloadKind, ProtocolConfig, ProtocolKind, RoundOutput, Session, Shard};

use crate::config::{AllocationMode, DatasetKind, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::plan::PlanFile;

/// Version of the `trace.csv` / `links.csv` / `summary.json` column sets.
pub const SCHEMA_VERSION: u32 = 1;

/// `trace.csv` columns, in order.
pub const TRACE_HEADER: [&str; 19] = [
    "schema_version",
    "protocol",
    "clients",
    "seed",
    "round",
    "train_loss",
    "eval_accuracy",
    "latency_s",
    "cumulative_latency_s",
    "phases",
    "uplink_bytes",
    "downlink_bytes",
    "model_bytes",
    "smashed_bytes",
    "total_bytes",
    "server_updates",
    "max_staleness",
    "mean_staleness",
    "participation",
];

pub const LINKS_HEADER: [&str; 7] = ["schema_version", "round", "src", "dst", "kind", "messages", "bytes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub schema_version: u32,
    pub protocol: String,
    pub clients: usize,
    pub seed: u64,
    pub round: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub latency_s: f64,
    pub cumulative_latency_s: f64,
    /// `name=seconds` pairs joined by `;`.
    pub phases: String,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub model_bytes: u64,
    pub smashed_bytes: u64,
    pub total_bytes: u64,
    pub server_updates: usize,
    pub max_staleness: u64,
    pub mean_staleness: f64,
    /// Batches processed per client, joined by `;`.
    pub participation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRow {
    pub schema_version: u32,
    pub round: usize,
    pub src: String,
    pub dst: String,
    pub kind: String,
    pub messages: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub clients: usize,
    pub rounds: usize,
    pub cut: usize,
    pub cut2: Option<usize>,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub total_latency_s: f64,
    pub total_bytes: u64,
    pub smashed_bytes: u64,
    pub max_staleness: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub rows: Vec<RoundRow>,
    pub links: Vec<LinkRow>,
    pub summary: Summary,
}

/// Per-run changes on top of a loaded configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub clients: Option<usize>,
    pub protocol: Option<ProtocolKind>,
}

/// Everything a run needs besides the round loop.
#[derive(Debug, Clone)]
pub struct Setup {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub clients: usize,
    pub profile: ModelProfile,
    pub protocol: ProtocolConfig,
    pub topology: Topology,
    pub shards: Vec<Shard>,
    pub test: Dataset,
}

impl Setup {
    pub fn new(loaded: &LoadedConfig, ov: Overrides) -> CliResult<Self> {
        let mut loaded = loaded.clone();
        if let Some(k) = ov.protocol {
            loaded.config.protocol.kind = k;
        }
        if let Some(m) = ov.clients {
            loaded.config.data.clients = m;
        }
        let c = &loaded.config;
        let seed = ov.seed.unwrap_or(c.seed);
        let clients = c.data.clients;
        let profile = loaded.profile()?;
        let protocol = loaded.protocol_config(seed, clients);
        protocol
            .validate(profile.len(), clients)
            .map_err(|e| loaded.error_at("protocol", "kind", e.to_string()))?;
        let topology = loaded.topology(seed, clients)?;
        let (train, test) = datasets(&loaded, seed)?;
        let d = &c.data;
        let min_size = d.min_size.unwrap_or(protocol.batch_size).max(protocol.batch_size);
        let parts = dirichlet_partition(&train.labels, d.classes, clients, d.beta, min_size, seed)
            .map_err(|e| loaded.error_at("data", "beta", e.to_string()))?;
        let shards = parts.iter().map(|rows| train.shard(rows)).collect::<splitedge::Result<Vec<_>>>()?;
        Ok(Self {
            seed,
            clients,
            profile,
            protocol,
            topology,
            shards,
            test,
            loaded,
        })
    }

    pub fn samples(&self) -> Vec<usize> {
        self.shards.iter().map(Shard::len).collect()
    }

    pub fn spec<'a>(&'a self, samples: &'a [usize], round: usize) -> RoundSpec<'a> {
        RoundSpec {
            cfg: &self.protocol,
            profile: &self.profile,
            samples,
            round,
        }
    }

    /// Allocation according to the configured mode.
    pub fn allocation(&self) -> CliResult<Allocation> {
        let m = self.clients;
        match self.loaded.config.allocation.mode {
            AllocationMode::Equal => Ok(Allocation::equal(m, &self.topology)),
            AllocationMode::Explicit => self.loaded.explicit_allocation(&self.topology, m),
            AllocationMode::Minmax => match self.protocol.kind {
                // One cut and a server in the middle: the allocator's model.
                ProtocolKind::Psl | ProtocolKind::Sfl | ProtocolKind::Epsl | ProtocolKind::AsyncPsl | ProtocolKind::VanillaSl => {
                    Ok(allocate_minmax(&self.split_problem(), self.protocol.cut)?.allocation)
                }
                ProtocolKind::Fedavg | ProtocolKind::Ushaped => Ok(Allocation::equal(m, &self.topology)),
            },
        }
    }

    pub fn split_problem(&self) -> SplitProblem<'_> {
        SplitProblem {
            profile: &self.profile,
            topology: &self.topology,
            clients: self.clients,
            batch_size: self.protocol.batch_size,
            compression: self.protocol.compression,
        }
    }
}

fn datasets(loaded: &LoadedConfig, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let d = &loaded.config.data;
    let n = d.total_samples();
    let test_n = d.test_samples.unwrap_or((n / 4).max(1));
    let make = |n, split| match d.kind {
        DatasetKind::Blobs => Dataset::blobs(n, d.classes, d.dim, d.noise, seed, split),
        DatasetKind::TwoMoons => Dataset::two_moons(n, d.noise, seed, split),
    };
    let err = |e: splitedge::Error| loaded.error_at("data", "kind", e.to_string());
    let shape = loaded.input_shape();
    let shaped = |mut ds: Dataset| -> CliResult<Dataset> {
        let mut full = vec![ds.len()];
        full.extend_from_slice(&shape);
        ds.inputs = ds.inputs.reshape(full).map_err(err)?;
        Ok(ds)
    };
    Ok((shaped(make(n, 0).map_err(err)?)?, shaped(make(test_n, 1).map_err(err)?)?))
}

fn is_model(kind: PayloadKind) -> bool {
    matches!(kind, PayloadKind::ClientModel | PayloadKind::ServerModel)
}

fn uplink(m: &Message) -> bool {
    matches!(m.src, Node::Client(_)) && !is_model(m.kind)
}

fn downlink(m: &Message) -> bool {
    !matches!(m.src, Node::Client(_)) && !is_model(m.kind)
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Per-round link rows, grouped by `(src, dst, kind)`.
pub fn link_rows(out: &RoundOutput) -> Vec<LinkRow> {
    let mut agg: BTreeMap<(Node, Node, PayloadKind), (usize, u64)> = BTreeMap::new();
    for m in &out.trace.messages {
        let e = agg.entry((m.src, m.dst, m.kind)).or_default();
        e.0 += 1;
        e.1 += m.wire_bytes();
    }
    agg.into_iter()
        .map(|((src, dst, kind), (messages, bytes))| LinkRow {
            schema_version: SCHEMA_VERSION,
            round: out.round,
            src: src.to_string(),
            dst: dst.to_string(),
            kind: kind.as_str().to_string(),
            messages,
            bytes,
        })
        .collect()
}

/// Runs the configured protocol, optionally pinned to a two-tier plan.
pub fn train(loaded: &LoadedConfig, ov: Overrides, plan: Option<&PlanFile>) -> CliResult<TrainOutput> {
    let mut setup = Setup::new(loaded, ov)?;
    let fixed = match plan {
        Some(p) => Some(p.apply(&mut setup)?),
        None => None,
    };
    let alloc = match fixed {
        Some(a) => a,
        None => setup.allocation()?,
    };
    let samples = setup.samples();
    let cfg = setup.protocol.clone();
    let m = setup.clients;
    let lock_step = !(cfg.kind == ProtocolKind::AsyncPsl && cfg.async_quorum < m);
    let timings = if cfg.kind == ProtocolKind::AsyncPsl {
        Some(client_timings(&setup.spec(&samples, 0), &setup.topology, &alloc)?)
    } else {
        None
    };
    let mut session = Session::new(&setup.profile, setup.shards.clone(), cfg.clone(), timings)?;

    let mut rows = Vec::with_capacity(loaded.config.rounds);
    let mut links = Vec::new();
    let mut clock = 0.0;
    let mut max_stale = 0;
    for round in 0..loaded.config.rounds {
        let out = session.run_round()?;
        let (latency, phases) = if lock_step {
            let lat = round_latency(&setup.spec(&samples, round), &setup.topology, &alloc)?;
            (lat.total, join(lat.phases.iter().map(|p| format!("{}={}", p.name, p.seconds))))
        } else {
            let t = out.sim_time.unwrap_or(0.0);
            (t, format!("async={t}"))
        };
        clock += latency;
        max_stale = max_stale.max(out.max_staleness());
        let accuracy = session.evaluate(&setup.test.inputs, &setup.test.labels)?;
        let t = &out.trace;
        rows.push(RoundRow {
            schema_version: SCHEMA_VERSION,
            protocol: cfg.kind.as_str().to_string(),
            clients: m,
            seed: setup.seed,
            round,
            train_loss: out.mean_loss(),
            eval_accuracy: accuracy,
            latency_s: latency,
            cumulative_latency_s: clock,
            phases,
            uplink_bytes: t.bytes_where(uplink),
            downlink_bytes: t.bytes_where(downlink),
            model_bytes: t.bytes_where(|m| is_model(m.kind)),
            smashed_bytes: t.smashed_bytes(),
            total_bytes: t.total_bytes(),
            server_updates: out.server_updates,
            max_staleness: out.max_staleness(),
            mean_staleness: out.mean_staleness(),
            participation: join(out.participation.iter()),
        });
        links.extend(link_rows(&out));
    }
    let last = rows.last().expect("rounds >= 1");
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        protocol: cfg.kind,
        seed: setup.seed,
        clients: m,
        rounds: rows.len(),
        cut: cfg.cut,
        cut2: cfg.cut2,
        final_accuracy: last.eval_accuracy,
        final_loss: last.train_loss,
        total_latency_s: clock,
        total_bytes: rows.iter().map(|r| r.total_bytes).sum(),
        smashed_bytes: rows.iter().map(|r| r.smashed_bytes).sum(),
        max_staleness: max_stale,
    };
    Ok(TrainOutput { rows, links, summary })
}

/// Predicted wire bytes per link summed over `rounds`, or `None` when the
/// protocol's traffic depends on event timing.
pub fn predicted_bytes(setup: &Setup, rounds: usize) -> CliResult<Option<BTreeMap<(Node, Node), u64>>> {
    let samples = setup.samples();
    let mut total = BTreeMap::new();
    for r in 0..rounds {
        match comm_volume(&setup.spec(&samples, r)) {
            Ok(v) => {
                for (k, b) in v {
                    *total.entry(k).or_insert(0) += b;
                }
            }
            Err(splitedge::Error::Unsupported(_)) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(total))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn write_train(dir: &Path, out: &TrainOutput) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_csv(&dir.join("trace.csv"), &TRACE_HEADER, &out.rows)?;
    write_csv(&dir.join("links.csv"), &LINKS_HEADER, &out.links)?;
    write_json(&dir.join("summary.json"), &out.summary)
}
