//! The `latency` command: total training latency of the user-edge-cloud,
//! user-edge and user-cloud architectures over a sweep of dataset sizes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use splitedge::compression::CompressionSpec;
use splitedge::network::Tier;
use splitedge::nn::ModelProfile;
use splitedge::planner::{plan_hierarchical, HierarchyProblem};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{write_csv, Overrides, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub schema_version: u32,
    pub dataset_size: usize,
    pub architecture: &'static str,
    pub cut1: usize,
    pub cut2: usize,
    pub round_latency_s: f64,
    pub total_latency_s: f64,
    pub smashed_bytes_per_round: u64,
}

pub const LATENCY_HEADER: [&str; 8] = [
    "schema_version",
    "dataset_size",
    "architecture",
    "cut1",
    "cut2",
    "round_latency_s",
    "total_latency_s",
    "smashed_bytes_per_round",
];

fn wire(spec: &CompressionSpec, batch: usize, sample: &[usize]) -> u64 {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample);
    let f = spec.wire_format(shape.iter().product());
    f.payload_bytes(&shape) + f.header_bytes()
}

/// Activation and gradient bytes crossing both cuts in one round.
fn smashed_per_round(p: &ModelProfile, spec: &CompressionSpec, samples: &[usize], batch: usize, l1: usize, l2: usize) -> u64 {
    let steps: u64 = samples.iter().map(|&n| (n / batch) as u64).sum();
    let mut per_step = 2 * wire(spec, batch, p.cut_shape(l1));
    if l2 < p.len() {
        per_step += 2 * wire(spec, batch, p.cut_shape(l2));
    }
    steps * per_step
}

pub fn latency(loaded: &LoadedConfig, ov: Overrides) -> CliResult<Vec<LatencyRow>> {
    let section = loaded
        .config
        .latency
        .clone()
        .ok_or_else(|| CliError::config(format!("{}: the latency command needs a [latency] section", loaded.path.display())))?;
    let seed = ov.seed.unwrap_or(loaded.config.seed);
    let clients = ov.clients.unwrap_or(loaded.config.data.clients);
    let profile = loaded.profile()?;
    let topology = loaded.topology(seed, clients)?;
    if topology.nodes_of(Tier::Cloud).is_empty() {
        return Err(loaded.error_at("topology", "cloud_rate", "the latency command needs a cloud node (set cloud_rate)"));
    }
    let batch = loaded.config.protocol.batch_size;
    let spec = loaded.config.compression;
    let mut rows = Vec::new();
    for &size in &section.dataset_sizes {
        let per_client = size / clients;
        if per_client < batch {
            return Err(loaded.error_at(
                "latency",
                "dataset_sizes",
                format!("dataset size {size} gives each of {clients} clients fewer than {batch} samples"),
            ));
        }
        let samples = vec![per_client; clients];
        let h = plan_hierarchical(&HierarchyProblem {
            profile: &profile,
            topology: &topology,
            samples: &samples,
            batch_size: batch,
            compression: spec,
        })?;
        let l = profile.len();
        for (architecture, c1, c2, t) in [
            ("user_edge_cloud", h.cut1, h.cut2, h.latency),
            ("user_edge", h.user_edge.0, l, h.user_edge.1),
            ("user_cloud", h.user_cloud.0, h.user_cloud.0, h.user_cloud.1),
        ] {
            rows.push(LatencyRow {
                schema_version: SCHEMA_VERSION,
                dataset_size: size,
                architecture,
                cut1: c1,
                cut2: c2,
                round_latency_s: t,
                total_latency_s: t * section.rounds_to_target as f64,
                smashed_bytes_per_round: smashed_per_round(&profile, &spec, &samples, batch, c1, c2),
            });
        }
    }
    Ok(rows)
}

pub fn write_latency(dir: &Path, rows: &[LatencyRow]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_csv(&dir.join("latency.csv"), &LATENCY_HEADER, rows)
}
