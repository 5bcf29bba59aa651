//! U-shaped split learning: clients keep both the first and the last layers,
//! so labels never leave the client.

use super::client::ClientState;
use super::config::ProtocolConfig;
use super::parallel::{apply_client_grad, bwd_cycles, check_canonical, fwd_cycles};
use super::trace::{Node, Pass, PayloadKind, Phase, RoundOutput};
use crate::compression::{compress_payload, quantize_weights_step};
use crate::nn::{loss_grad, ParamGrads, SegmentState};
use crate::{Error, Result};

/// One U-shaped round, clients in lock-step. Each client holds
/// `segments = [head 0..cut, tail cut2..L]`; the server holds `cut..cut2`.
pub fn run_round_ushaped(
    clients: &mut [ClientState],
    server: &mut SegmentState,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_canonical(clients)?;
    if let Some(c) = clients.iter().find(|c| c.segments.len() != 2) {
        return Err(Error::config(format!("client {} needs head and tail segments for ushaped", c.id)));
    }
    let spec = &cfg.compression;
    let plans: Vec<Vec<Vec<usize>>> = clients.iter().map(|c| c.epoch_batches(cfg.seed, round)).collect();
    let steps = plans.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = RoundOutput::new(round, clients.len());
    let (server_fwd, server_bwd) = (fwd_cycles(server), bwd_cycles(server));

    for s in 0..steps {
        let mut pending = Vec::new();
        let mut contributions: Vec<(ParamGrads, f64)> = Vec::new();
        for (ci, plan) in plans.iter().enumerate() {
            let Some(rows) = plan.get(s) else { continue };
            let c = &mut clients[ci];
            let id = c.id;
            let b = rows.len() as f64;
            let (x, y) = c.shard.batch(rows);

            let (act, head_cache) = c.segments[0].forward(&x)?;
            out.compute.add(Node::Client(id), Pass::Forward, fwd_cycles(&c.segments[0]) * b);
            let (act_rx, _) = compress_payload(&act, spec)?;
            out.trace.push(round, s, Phase::Forward, Node::Client(id), Node::Server, PayloadKind::Activation, act.shape(), spec.wire_format(act.len()));

            let (mid, server_cache) = server.forward(&act_rx)?;
            out.compute.add(Node::Server, Pass::Forward, server_fwd * b);
            let (mid_rx, _) = compress_payload(&mid, spec)?;
            out.trace.push(round, s, Phase::Forward, Node::Server, Node::Client(id), PayloadKind::Activation, mid.shape(), spec.wire_format(mid.len()));

            let (logits, tail_cache) = c.segments[1].forward(&mid_rx)?;
            let (loss, g) = loss_grad(&logits, &y)?;
            let (tail_grad, tail_pg) = c.segments[1].backward(&tail_cache, &g)?;
            let tail = &mut c.segments[1];
            out.compute.add(Node::Client(id), Pass::Forward, fwd_cycles(tail) * b);
            out.compute.add(Node::Client(id), Pass::Backward, bwd_cycles(tail) * b);
            tail.sgd_step(&tail_pg, cfg.lr)?;
            quantize_weights_step(tail, spec.client_weight_bits)?;
            out.loss_sum += loss * b;
            out.samples += rows.len();
            out.participation[ci] += 1;

            let (grad_rx, _) = compress_payload(&tail_grad, spec)?;
            out.trace.push(round, s, Phase::Backward, Node::Client(id), Node::Server, PayloadKind::Grad, tail_grad.shape(), spec.wire_format(tail_grad.len()));
            let (cut_grad, pg) = server.backward(&server_cache, &grad_rx)?;
            out.compute.add(Node::Server, Pass::Backward, server_bwd * b);
            contributions.push((pg, b));
            pending.push((ci, head_cache, cut_grad));
        }
        if contributions.is_empty() {
            continue;
        }
        let total: f64 = contributions.iter().map(|c| c.1).sum();
        let grads: Vec<&ParamGrads> = contributions.iter().map(|c| &c.0).collect();
        let weights: Vec<f64> = contributions.iter().map(|c| c.1 / total).collect();
        server.sgd_step(&ParamGrads::weighted_sum(&grads, &weights)?, cfg.lr)?;
        quantize_weights_step(server, spec.server_weight_bits)?;
        out.server_updates += 1;

        for (ci, head_cache, cut_grad) in pending {
            let id = clients[ci].id;
            let (rx, _) = compress_payload(&cut_grad, spec)?;
            out.trace.push(round, s, Phase::Backward, Node::Server, Node::Client(id), PayloadKind::Grad, cut_grad.shape(), spec.wire_format(cut_grad.len()));
            apply_client_grad(&mut clients[ci], &head_cache, &rx, cfg, &mut out)?;
        }
    }
    Ok(out)
}
