//! Run configuration, read from a TOML file.
//!
//! Every section rejects unknown keys. Parse errors carry the line and column
//! of the offending token; semantic errors point at the key they concern.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use splitedge::compression::CompressionSpec;
use splitedge::network::{Allocation, LinkSpec, NodeSpec, SharedPool, Tier, Topology};
use splitedge::nn::{LayerKind, ModelProfile};
use splitedge::protocols::{ProtocolConfig, ProtocolKind};
use splitedge::rng::{self, tag};

use crate::error::{CliError, CliResult, Location};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub rounds: usize,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub allocation: AllocationSection,
    #[serde(default)]
    pub compression: CompressionSpec,
    #[serde(default)]
    pub latency: Option<LatencySection>,
    #[serde(default)]
    pub plan: Option<PlanSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: ProtocolKind,
    #[serde(default = "one")]
    pub cut: usize,
    #[serde(default)]
    pub cut2: Option<usize>,
    #[serde(default)]
    pub epsl_phi: f64,
    #[serde(default = "one")]
    pub sfl_avg_period: usize,
    /// Defaults to every client.
    #[serde(default)]
    pub async_quorum: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_lr() -> f64 {
    0.05
}

fn default_batch() -> usize {
    16
}

/// Either an MLP preset (`hidden`) or an explicit layer list. Input width and
/// class count of the preset come from the dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub layers: Option<Vec<LayerKind>>,
    /// Per-sample input shape for `layers`, e.g. `[1, 12, 12]` for convs.
    /// Its product must equal the data dimension.
    #[serde(default)]
    pub input_shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    TwoMoons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DatasetKind,
    pub clients: usize,
    /// Total training samples. Exclusive with `samples_per_client`.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub samples_per_client: Option<usize>,
    /// Defaults to a quarter of the training samples.
    #[serde(default)]
    pub test_samples: Option<usize>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Dirichlet concentration; `inf` deals IID shards.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Smallest shard accepted by the partitioner; defaults to the batch size.
    #[serde(default)]
    pub min_size: Option<usize>,
}

fn default_classes() -> usize {
    3
}

fn default_dim() -> usize {
    2
}

fn default_noise() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    f64::INFINITY
}

impl DataSection {
    pub fn total_samples(&self) -> usize {
        self.samples.unwrap_or_else(|| self.samples_per_client.unwrap_or(0) * self.clients)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default = "default_server_rate")]
    pub server_rate: f64,
    /// One compute rate per client. Exclusive with `client_rate_range`.
    #[serde(default)]
    pub client_rates: Option<Vec<f64>>,
    /// Rates drawn uniformly from `[lo, hi)` with the run seed.
    #[serde(default)]
    pub client_rate_range: Option<[f64; 2]>,
    /// Shared client spectrum in Hz. Without it, client links use `link_rate`.
    #[serde(default)]
    pub total_hz: Option<f64>,
    #[serde(default = "default_efficiency")]
    pub spectral_efficiency: f64,
    #[serde(default)]
    pub link_rate: Option<f64>,
    /// Adds a cloud node above the server (which acts as the edge).
    #[serde(default)]
    pub cloud_rate: Option<f64>,
    #[serde(default)]
    pub edge_cloud_rate: Option<f64>,
    /// Edge-cloud rate as a fraction of the pooled client capacity.
    #[serde(default)]
    pub edge_cloud_fraction: Option<f64>,
    /// Explicit mesh; replaces everything above when present.
    #[serde(default)]
    pub nodes: Option<Vec<NodeSpec>>,
    #[serde(default)]
    pub links: Option<Vec<LinkSpec>>,
}

fn default_server_rate() -> f64 {
    7e9
}

fn default_efficiency() -> f64 {
    1.0
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            server_rate: default_server_rate(),
            client_rates: None,
            client_rate_range: None,
            total_hz: Some(70e6),
            spectral_efficiency: 1.0,
            link_rate: None,
            cloud_rate: None,
            edge_cloud_rate: None,
            edge_cloud_fraction: None,
            nodes: None,
            links: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    #[default]
    Equal,
    Minmax,
    Explicit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    #[serde(default)]
    pub mode: AllocationMode,
    #[serde(default)]
    pub uplink_hz: Option<Vec<f64>>,
    #[serde(default)]
    pub downlink_hz: Option<Vec<f64>>,
    #[serde(default)]
    pub server_share: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    pub dataset_sizes: Vec<usize>,
    /// Rounds assumed to reach the target accuracy.
    pub rounds_to_target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Split,
    Hierarchical,
    Multihop,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(default)]
    pub planner: PlannerKind,
    /// Multihop only.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub destinations: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub protocols: Option<Vec<ProtocolKind>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub clients: Option<Vec<usize>>,
}

/// A parsed configuration together with its source text, for pointing
/// semantic errors at lines.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: RunConfig,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Line and column of `key` inside `[section]` (top level when `section` is
/// empty), falling back to the section header.
pub fn locate(text: &str, section: &str, key: &str) -> Option<(usize, usize)> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_start();
        if let Some(name) = line.strip_prefix('[') {
            current = name.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if current == section {
                header = Some((i + 1, 1));
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some((i + 1, raw.len() - line.len() + 1));
                }
            }
        }
    }
    header
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_str(path, text)
    }

    pub fn from_str(path: &Path, text: String) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(&text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(&text, s.start));
            CliError::Config {
                location: Some(Location {
                    path: path.to_path_buf(),
                    line,
                    column,
                }),
                message: e.message().trim().to_string(),
            }
        })?;
        let loaded = Self {
            path: path.to_path_buf(),
            text,
            config,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Error anchored at `section.key`.
    pub fn error_at(&self, section: &str, key: &str, message: impl Into<String>) -> CliError {
        CliError::Config {
            location: locate(&self.text, section, key).map(|(line, column)| Location {
                path: self.path.clone(),
                line,
                column,
            }),
            message: message.into(),
        }
    }

    fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        let d = &c.data;
        if c.rounds == 0 {
            return Err(self.error_at("", "rounds", "rounds must be >= 1"));
        }
        if d.clients == 0 {
            return Err(self.error_at("data", "clients", "clients must be >= 1"));
        }
        match (d.samples, d.samples_per_client) {
            (Some(_), Some(_)) => {
                return Err(self.error_at("data", "samples_per_client", "give either samples or samples_per_client, not both"))
            }
            (None, None) => return Err(self.error_at("data", "clients", "data needs samples or samples_per_client")),
            _ => {}
        }
        if d.total_samples() < d.clients * c.protocol.batch_size {
            return Err(self.error_at(
                "data",
                if d.samples.is_some() { "samples" } else { "samples_per_client" },
                format!(
                    "{} samples cannot give {} clients a batch of {} each",
                    d.total_samples(),
                    d.clients,
                    c.protocol.batch_size
                ),
            ));
        }
        if !(d.beta > 0.0) {
            return Err(self.error_at("data", "beta", format!("beta must be > 0, got {}", d.beta)));
        }
        if !(d.noise >= 0.0 && d.noise.is_finite()) {
            return Err(self.error_at("data", "noise", format!("noise must be finite and >= 0, got {}", d.noise)));
        }
        if d.kind == DatasetKind::TwoMoons && d.classes != 2 {
            return Err(self.error_at("data", "classes", "two_moons has exactly 2 classes"));
        }
        match (&c.model.hidden, &c.model.layers) {
            (Some(_), Some(_)) => return Err(self.error_at("model", "layers", "give either hidden or layers, not both")),
            (_, None) if c.model.input_shape.is_some() => {
                return Err(self.error_at("model", "input_shape", "input_shape needs an explicit layers list"))
            }
            _ => {}
        }
        let profile = self.profile()?;
        let protocol = self.protocol_config(c.seed, d.clients);
        let key = self.protocol_key(&protocol, &profile);
        protocol
            .validate(profile.len(), d.clients)
            .map_err(|e| self.error_at("protocol", key, e.to_string()))?;
        c.compression
            .validate()
            .map_err(|e| self.error_at("compression", "", e.to_string()))?;
        let t = &c.topology;
        if t.client_rates.is_some() && t.client_rate_range.is_some() {
            return Err(self.error_at("topology", "client_rate_range", "give either client_rates or client_rate_range"));
        }
        if let Some(r) = &t.client_rates {
            if r.len() != d.clients && t.nodes.is_none() {
                return Err(self.error_at(
                    "topology",
                    "client_rates",
                    format!("{} client rates for {} clients", r.len(), d.clients),
                ));
            }
        }
        if let Some([lo, hi]) = t.client_rate_range {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(self.error_at("topology", "client_rate_range", "client_rate_range needs 0 < lo < hi"));
            }
        }
        if t.total_hz.is_none() && t.link_rate.is_none() && t.nodes.is_none() {
            return Err(self.error_at("topology", "link_rate", "without total_hz, client links need link_rate"));
        }
        self.topology(c.seed, d.clients)?;
        if let Some(l) = &c.latency {
            if l.dataset_sizes.is_empty() || l.rounds_to_target == 0 {
                return Err(self.error_at("latency", "dataset_sizes", "latency needs dataset sizes and rounds_to_target >= 1"));
            }
        }
        if let Some(s) = &c.sweep {
            if s.clients.as_ref().is_some_and(|m| m.contains(&0)) {
                return Err(self.error_at("sweep", "clients", "client counts must be >= 1"));
            }
        }
        Ok(())
    }

    fn protocol_key(&self, p: &ProtocolConfig, profile: &ModelProfile) -> &'static str {
        if p.cut > profile.len() {
            "cut"
        } else if p.kind == ProtocolKind::Ushaped {
            "cut2"
        } else if !(0.0..=1.0).contains(&p.epsl_phi) {
            "epsl_phi"
        } else if p.kind == ProtocolKind::AsyncPsl {
            "async_quorum"
        } else if p.sfl_avg_period == 0 {
            "sfl_avg_period"
        } else if p.batch_size == 0 {
            "batch_size"
        } else {
            "lr"
        }
    }

    pub fn profile(&self) -> CliResult<ModelProfile> {
        let c = &self.config;
        let input = match c.data.kind {
            DatasetKind::Blobs => c.data.dim,
            DatasetKind::TwoMoons => 2,
        };
        let shape = self.input_shape();
        if shape.iter().product::<usize>() != input {
            return Err(self.error_at(
                "model",
                "input_shape",
                format!("input_shape {shape:?} does not hold {input} input values"),
            ));
        }
        let profile = match (&c.model.hidden, &c.model.layers) {
            (_, Some(layers)) => ModelProfile::from_kinds(&shape, layers),
            (Some(h), None) => ModelProfile::mlp(input, h, c.data.classes),
            (None, None) => ModelProfile::mlp(input, &[16, 16], c.data.classes),
        };
        let profile = profile.map_err(|e| self.error_at("model", if c.model.layers.is_some() { "layers" } else { "hidden" }, e.to_string()))?;
        if profile.classes() != c.data.classes {
            return Err(self.error_at(
                "model",
                "layers",
                format!("model predicts {} classes but the data has {}", profile.classes(), c.data.classes),
            ));
        }
        Ok(profile)
    }

    /// Sample shape fed to the model.
    pub fn input_shape(&self) -> Vec<usize> {
        let c = &self.config;
        match (&c.model.input_shape, c.data.kind) {
            (Some(s), _) => s.clone(),
            (None, DatasetKind::Blobs) => vec![c.data.dim],
            (None, DatasetKind::TwoMoons) => vec![2],
        }
    }

    pub fn protocol_config(&self, seed: u64, clients: usize) -> ProtocolConfig {
        let c = &self.config;
        let p = &c.protocol;
        ProtocolConfig {
            kind: p.kind,
            cut: p.cut,
            cut2: p.cut2,
            epsl_phi: p.epsl_phi,
            sfl_avg_period: p.sfl_avg_period,
            async_quorum: p.async_quorum.unwrap_or(clients),
            lr: p.lr,
            rounds: c.rounds,
            batch_size: p.batch_size,
            seed,
            compression: c.compression,
        }
    }

    /// Topology for `clients` clients. Rates drawn from a range use the
    /// stream `(seed, TOPOLOGY)`.
    pub fn topology(&self, seed: u64, clients: usize) -> CliResult<Topology> {
        let t = &self.config.topology;
        let err = |key: &str, e: splitedge::Error| self.error_at("topology", key, e.to_string());
        if let Some(nodes) = &t.nodes {
            let links = t.links.clone().unwrap_or_default();
            let pool = t.total_hz.map(|hz| SharedPool {
                total_hz: hz,
                spectral_efficiency: t.spectral_efficiency,
            });
            return Topology::new(nodes.clone(), links, pool).map_err(|e| err("nodes", e));
        }
        let rates: Vec<f64> = match (&t.client_rates, t.client_rate_range) {
            (Some(r), _) => r.iter().copied().cycle().take(clients).collect(),
            (None, Some([lo, hi])) => {
                let mut rng = rng::stream(seed, &[tag::TOPOLOGY]);
                (0..clients).map(|_| rng.random_range(lo..hi)).collect()
            }
            (None, None) => vec![1e9; clients],
        };
        let pool = t.total_hz.map(|hz| SharedPool {
            total_hz: hz,
            spectral_efficiency: t.spectral_efficiency,
        });
        let mut topo = Topology::star(t.server_rate, &rates, pool, t.link_rate.unwrap_or(0.0)).map_err(|e| err("server_rate", e))?;
        if let Some(cloud) = t.cloud_rate {
            let rate = match (t.edge_cloud_rate, t.edge_cloud_fraction, pool) {
                (Some(r), _, _) => r,
                (None, Some(f), Some(p)) => f * p.total_hz * p.spectral_efficiency,
                (None, Some(f), None) => f * t.link_rate.unwrap_or(0.0),
                (None, None, _) => {
                    return Err(self.error_at("topology", "cloud_rate", "a cloud node needs edge_cloud_rate or edge_cloud_fraction"))
                }
            };
            let mut nodes = topo.nodes.clone();
            nodes.push(NodeSpec::new("cloud", Tier::Cloud, cloud));
            let mut links = topo.links.clone();
            for (src, dst) in [("server", "cloud"), ("cloud", "server")] {
                links.push(LinkSpec {
                    src: src.into(),
                    dst: dst.into(),
                    rate,
                });
            }
            topo = Topology::new(nodes, links, pool).map_err(|e| err("cloud_rate", e))?;
        }
        Ok(topo)
    }

    /// Explicit allocation from the config, checked against `topo`.
    pub fn explicit_allocation(&self, topo: &Topology, clients: usize) -> CliResult<Allocation> {
        let a = &self.config.allocation;
        let need = |v: &Option<Vec<f64>>, key: &str| {
            v.clone()
                .ok_or_else(|| self.error_at("allocation", key, format!("explicit allocation needs {key}")))
        };
        let alloc = Allocation {
            uplink_hz: need(&a.uplink_hz, "uplink_hz")?,
            downlink_hz: need(&a.downlink_hz, "downlink_hz")?,
            server_share: need(&a.server_share, "server_share")?,
        };
        alloc
            .validate(topo, clients)
            .map_err(|e| self.error_at("allocation", "mode", e.to_string()))?;
        Ok(alloc)
    }
}
