//! The `sweep` command: one training run per (protocol, clients, seed) cell.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{train, write_csv, write_train, Overrides, Summary, TrainOutput};

const SWEEP_HEADER: [&str; 13] = [
    "schema_version",
    "protocol",
    "seed",
    "clients",
    "rounds",
    "cut",
    "cut2",
    "final_accuracy",
    "final_loss",
    "total_latency_s",
    "total_bytes",
    "smashed_bytes",
    "max_staleness",
];

pub struct Cell {
    pub dir: String,
    pub overrides: Overrides,
}

pub fn cells(loaded: &LoadedConfig, ov: Overrides) -> Vec<Cell> {
    let c = &loaded.config;
    let s = c.sweep.clone().unwrap_or_default();
    let protocols = s.protocols.unwrap_or_else(|| vec![ov.protocol.unwrap_or(c.protocol.kind)]);
    let clients = s.clients.unwrap_or_else(|| vec![ov.clients.unwrap_or(c.data.clients)]);
    let seeds = match (ov.seed, s.seeds) {
        (Some(seed), _) => vec![seed],
        (None, Some(v)) => v,
        (None, None) => vec![c.seed],
    };
    let mut out = Vec::new();
    for &p in &protocols {
        for &m in &clients {
            for &seed in &seeds {
                out.push(Cell {
                    dir: format!("{}-m{m}-s{seed}", p.as_str()),
                    overrides: Overrides {
                        seed: Some(seed),
                        clients: Some(m),
                        protocol: Some(p),
                    },
                });
            }
        }
    }
    out
}

/// Runs every cell in parallel; nothing is written unless all succeed.
pub fn sweep(loaded: &LoadedConfig, ov: Overrides) -> CliResult<Vec<(String, TrainOutput)>> {
    cells(loaded, ov)
        .into_par_iter()
        .map(|c| train(loaded, c.overrides, None).map(|o| (c.dir, o)))
        .collect()
}

pub fn write_sweep(dir: &Path, runs: &[(String, TrainOutput)]) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut traces = Vec::new();
    for (name, out) in runs {
        let d = dir.join(name);
        write_train(&d, out)?;
        traces.push(d.join("trace.csv"));
    }
    let summaries: Vec<&Summary> = runs.iter().map(|r| &r.1.summary).collect();
    write_csv(&dir.join("sweep.csv"), &SWEEP_HEADER, &summaries)?;
    Ok(traces)
}
