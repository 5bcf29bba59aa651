#![allow(dead_code)]

use splitedge::data::{dirichlet_partition, Dataset};
use splitedge::nn::ModelProfile;
use splitedge::protocols::{ProtocolConfig, ProtocolKind, Session, Shard};

/// Four weight layers: dense, relu, dense, relu, dense, relu, head.
pub fn mlp4(dim: usize, classes: usize) -> ModelProfile {
    ModelProfile::mlp(dim, &[8, 6, 5], classes).unwrap()
}

/// IID blob shards of `per_client` samples each.
pub fn iid_shards(clients: usize, per_client: usize, dim: usize, classes: usize, seed: u64) -> Vec<Shard> {
    let d = Dataset::blobs(clients * per_client, classes, dim, 1.0, seed, 0).unwrap();
    dirichlet_partition(&d.labels, classes, clients, f64::INFINITY, 1, seed)
        .unwrap()
        .iter()
        .map(|rows| d.shard(rows).unwrap())
        .collect()
}

pub fn config(kind: ProtocolKind, cut: usize, seed: u64, batch: usize) -> ProtocolConfig {
    let mut c = ProtocolConfig::new(kind, cut);
    c.seed = seed;
    c.batch_size = batch;
    c.lr = 0.1;
    c
}

pub fn run(profile: &ModelProfile, shards: Vec<Shard>, cfg: ProtocolConfig, rounds: usize) -> (Session, Vec<splitedge::protocols::RoundOutput>) {
    let mut s = Session::new(profile, shards, cfg, None).unwrap();
    let outs = (0..rounds).map(|_| s.run_round().unwrap()).collect();
    (s, outs)
}
