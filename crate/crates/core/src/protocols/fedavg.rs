//! Federated averaging with full local models.

use super::centralized::centralized_step;
use super::client::ClientState;
use super::config::ProtocolConfig;
use super::parallel::{bwd_cycles, check_canonical, fwd_cycles};
use super::trace::{Node, Pass, PayloadKind, Phase, RoundOutput};
use crate::compression::{quantize_weights_step, WireFormat};
use crate::nn::SegmentState;
use crate::{Error, Result};

/// One FedAvg round: the server sends `global` to every client, each client
/// runs one local epoch, uploads its model, and the server replaces `global`
/// with the arithmetic mean of the uploads.
pub fn run_round_fedavg(
    clients: &mut [ClientState],
    global: &mut SegmentState,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_canonical(clients)?;
    for c in clients.iter() {
        let local = c.head();
        if local.start() != global.start() || local.end() != global.end() || local.layers() != global.layers() {
            return Err(Error::config(format!(
                "client {} holds layers {}..{} with a different architecture than the global model {}..{}",
                c.id,
                local.start(),
                local.end(),
                global.start(),
                global.end()
            )));
        }
    }
    let mut out = RoundOutput::new(round, clients.len());
    let down = WireFormat::Dense {
        bits: cfg.compression.server_weight_bits,
    };
    let up = WireFormat::Dense {
        bits: cfg.compression.client_weight_bits,
    };
    let shape = [global.param_count()];
    let (fwd, bwd) = (fwd_cycles(global), bwd_cycles(global));

    for (ci, c) in clients.iter_mut().enumerate() {
        out.trace.push(round, 0, Phase::Sync, Node::Server, Node::Client(c.id), PayloadKind::ServerModel, &shape, down);
        c.segments[0] = global.clone();
        for rows in &c.epoch_batches(cfg.seed, round) {
            let loss = centralized_step(&mut c.segments[0], &c.shard, rows, cfg.lr)?;
            quantize_weights_step(&mut c.segments[0], cfg.compression.client_weight_bits)?;
            let b = rows.len() as f64;
            out.compute.add(Node::Client(c.id), Pass::Forward, fwd * b);
            out.compute.add(Node::Client(c.id), Pass::Backward, bwd * b);
            out.loss_sum += loss * b;
            out.samples += rows.len();
            out.participation[ci] += 1;
        }
    }
    for c in clients.iter() {
        out.trace.push(round, 0, Phase::Sync, Node::Client(c.id), Node::Server, PayloadKind::ClientModel, &shape, up);
    }
    let weight = 1.0 / clients.len() as f64;
    let locals: Vec<&SegmentState> = clients.iter().map(|c| c.head()).collect();
    let averaged = SegmentState::weighted_average(&locals, &vec![weight; locals.len()])?;
    global.set_params(averaged)?;
    quantize_weights_step(global, cfg.compression.server_weight_bits)?;
    Ok(out)
}
