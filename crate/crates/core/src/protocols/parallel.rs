//! Parallel split learning: PSL, SFL and EPSL.
//!
//! All three share one lock-step batch step. Clients forward in parallel, the
//! server runs forward and backward per client on a single server-side model
//! and applies the sample-weighted mean of the per-client parameter gradients.
//! EPSL additionally collapses the backward pass of an aggregated client group
//! into one pass over the group-mean loss gradient and group-mean cached
//! activations, and broadcasts the resulting cut-layer gradient.

use rand::seq::SliceRandom;

use super::client::ClientState;
use super::config::ProtocolConfig;
use super::trace::{Node, Pass, PayloadKind, Phase, RoundOutput};
use crate::compression::{compress_payload, quantize_weights_step, WireFormat};
use crate::nn::{loss_grad, ActivationCache, ParamGrads, SegmentState};
use crate::rng::{self, tag};
use crate::{Error, Result, Tensor};

pub(crate) fn fwd_cycles(seg: &SegmentState) -> f64 {
    seg.layers().iter().map(|l| l.fwd_cycles_per_sample).sum()
}

pub(crate) fn bwd_cycles(seg: &SegmentState) -> f64 {
    seg.layers().iter().map(|l| l.bwd_cycles_per_sample).sum()
}

pub(crate) fn check_canonical(clients: &[ClientState]) -> Result<()> {
    if clients.windows(2).any(|w| w[0].id >= w[1].id) {
        return Err(Error::config("clients must be ordered by ascending id"));
    }
    Ok(())
}

struct Forwarded {
    client: usize,
    labels: Vec<usize>,
    client_cache: ActivationCache,
    server_cache: ActivationCache,
    loss_grad: Tensor,
}

/// One lock-step global batch over `batches` (`(client index, sample rows)`
/// in ascending client order). Clients listed in `group` share one server
/// backward pass; the rest get individual ones.
pub(crate) fn parallel_step(
    clients: &mut [ClientState],
    batches: &[(usize, Vec<usize>)],
    server: &mut SegmentState,
    group: &[usize],
    cfg: &ProtocolConfig,
    step: usize,
    out: &mut RoundOutput,
) -> Result<()> {
    let spec = &cfg.compression;
    let round = out.round;
    let server_fwd = fwd_cycles(server);
    let server_bwd = bwd_cycles(server);

    let mut fwd = Vec::with_capacity(batches.len());
    for (ci, rows) in batches {
        let client = &clients[*ci];
        let id = client.id;
        let (x, labels) = client.shard.batch(rows);
        let head = &client.segments[0];
        let (act, client_cache) = head.forward(&x)?;
        out.compute.add(Node::Client(id), Pass::Forward, fwd_cycles(head) * rows.len() as f64);
        let (act_rx, _) = compress_payload(&act, spec)?;
        let format = spec.wire_format(act.len());
        out.trace.push(round, step, Phase::Forward, Node::Client(id), Node::Server, PayloadKind::Activation, act.shape(), format);
        out.trace.push(round, step, Phase::Forward, Node::Client(id), Node::Server, PayloadKind::Label, &[labels.len()], WireFormat::FULL);

        let (logits, server_cache) = server.forward(&act_rx)?;
        out.compute.add(Node::Server, Pass::Forward, server_fwd * rows.len() as f64);
        let (loss, g) = loss_grad(&logits, &labels)?;
        out.loss_sum += loss * labels.len() as f64;
        out.samples += labels.len();
        out.participation[*ci] += 1;
        fwd.push(Forwarded {
            client: *ci,
            labels,
            client_cache,
            server_cache,
            loss_grad: g,
        });
    }

    let grouped: Vec<usize> = (0..fwd.len()).filter(|&i| group.contains(&fwd[i].client)).collect();
    let mut contributions: Vec<(ParamGrads, f64)> = Vec::with_capacity(fwd.len());
    let mut cut_grads: Vec<Option<Tensor>> = vec![None; fwd.len()];
    let mut shared: Option<Tensor> = None;

    if let Some(&first) = grouped.first() {
        let b = fwd[first].labels.len();
        if let Some(&bad) = grouped.iter().find(|&&i| fwd[i].labels.len() != b) {
            return Err(Error::config(format!(
                "EPSL aggregated group mixes batch sizes {b} and {} (client {})",
                fwd[bad].labels.len(),
                clients[fwd[bad].client].id
            )));
        }
        let grads: Vec<&Tensor> = grouped.iter().map(|&i| &fwd[i].loss_grad).collect();
        let caches: Vec<&ActivationCache> = grouped.iter().map(|&i| &fwd[i].server_cache).collect();
        let mean_grad = Tensor::mean(&grads)?;
        let mean_cache = ActivationCache::mean(&caches)?;
        let (cut_grad, pg) = server.backward(&mean_cache, &mean_grad)?;
        out.compute.add(Node::Server, Pass::Backward, server_bwd * b as f64);
        contributions.push((pg, (grouped.len() * b) as f64));
        shared = Some(cut_grad);
    }
    for (i, f) in fwd.iter().enumerate() {
        if grouped.contains(&i) {
            continue;
        }
        let (cut_grad, pg) = server.backward(&f.server_cache, &f.loss_grad)?;
        out.compute.add(Node::Server, Pass::Backward, server_bwd * f.labels.len() as f64);
        contributions.push((pg, f.labels.len() as f64));
        cut_grads[i] = Some(cut_grad);
    }

    let total: f64 = contributions.iter().map(|c| c.1).sum();
    let grads: Vec<&ParamGrads> = contributions.iter().map(|c| &c.0).collect();
    let weights: Vec<f64> = contributions.iter().map(|c| c.1 / total).collect();
    let server_grad = ParamGrads::weighted_sum(&grads, &weights)?;
    server.sgd_step(&server_grad, cfg.lr)?;
    quantize_weights_step(server, spec.server_weight_bits)?;
    out.server_updates += 1;

    if let Some(cut_grad) = shared {
        let (rx, _) = compress_payload(&cut_grad, spec)?;
        let format = spec.wire_format(cut_grad.len());
        out.trace.push(round, step, Phase::Backward, Node::Server, Node::Broadcast, PayloadKind::Grad, cut_grad.shape(), format);
        for &i in &grouped {
            cut_grads[i] = Some(rx.clone());
        }
    }
    for (i, f) in fwd.iter().enumerate() {
        let grad = cut_grads[i].take().expect("every participant receives a cut gradient");
        let grad = if grouped.contains(&i) {
            grad
        } else {
            let (rx, _) = compress_payload(&grad, spec)?;
            let format = spec.wire_format(grad.len());
            let id = clients[f.client].id;
            out.trace.push(round, step, Phase::Backward, Node::Server, Node::Client(id), PayloadKind::Grad, grad.shape(), format);
            rx
        };
        apply_client_grad(&mut clients[f.client], &f.client_cache, &grad, cfg, out)?;
    }
    Ok(())
}

pub(crate) fn apply_client_grad(
    client: &mut ClientState,
    cache: &ActivationCache,
    grad: &Tensor,
    cfg: &ProtocolConfig,
    out: &mut RoundOutput,
) -> Result<()> {
    let head = &mut client.segments[0];
    let (_, pg) = head.backward(cache, grad)?;
    out.compute.add(Node::Client(client.id), Pass::Backward, bwd_cycles(head) * cache.batch() as f64);
    head.sgd_step(&pg, cfg.lr)?;
    quantize_weights_step(head, cfg.compression.client_weight_bits)
}

/// Runs every client's epoch `round` in lock-step; clients with fewer batches
/// drop out of later steps.
fn run_parallel_round(
    clients: &mut [ClientState],
    server: &mut SegmentState,
    cfg: &ProtocolConfig,
    round: usize,
    group: &[usize],
) -> Result<RoundOutput> {
    check_canonical(clients)?;
    let plans: Vec<Vec<Vec<usize>>> = clients.iter().map(|c| c.epoch_batches(cfg.seed, round)).collect();
    let steps = plans.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = RoundOutput::new(round, clients.len());
    for s in 0..steps {
        let batches: Vec<(usize, Vec<usize>)> = plans
            .iter()
            .enumerate()
            .filter_map(|(ci, p)| p.get(s).map(|rows| (ci, rows.clone())))
            .collect();
        parallel_step(clients, &batches, server, group, cfg, s, &mut out)?;
    }
    Ok(out)
}

/// Parallel split learning: no client-model synchronization, ever.
pub fn run_round_psl(
    clients: &mut [ClientState],
    server: &mut SegmentState,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    run_parallel_round(clients, server, cfg, round, &[])
}

/// Client indices aggregated by EPSL in `round`: the first `ceil(phi * M)`
/// of a per-round seeded permutation, returned in ascending order.
pub fn epsl_group(cfg: &ProtocolConfig, clients: usize, round: usize) -> Vec<usize> {
    let size = cfg.epsl_group_size(clients);
    if size == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..clients).collect();
    order.shuffle(&mut rng::stream(cfg.seed, &[tag::EPSL_GROUP, round as u64]));
    let mut group = order[..size].to_vec();
    group.sort_unstable();
    group
}

/// EPSL round. With `phi = 0` this is exactly [`run_round_psl`].
pub fn run_round_epsl(
    clients: &mut [ClientState],
    server: &mut SegmentState,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    let group = epsl_group(cfg, clients.len(), round);
    if let Some(&g0) = group.first() {
        let b = clients[g0].batch_size;
        if let Some(&bad) = group.iter().find(|&&g| clients[g].batch_size != b) {
            return Err(Error::config(format!(
                "EPSL requires equal batch sizes in the aggregated group: client {} uses {b}, client {} uses {}",
                clients[g0].id, clients[bad].id, clients[bad].batch_size
            )));
        }
    }
    run_parallel_round(clients, server, cfg, round, &group)
}

/// SFL round: a PSL round, then every `sfl_avg_period` rounds the client-side
/// models are uploaded to the fed server, averaged by sample count and sent
/// back.
pub fn run_round_sfl(
    clients: &mut [ClientState],
    server: &mut SegmentState,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    if cfg.sfl_avg_period < 1 {
        return Err(Error::config("sfl_avg_period must be >= 1"));
    }
    let mut out = run_parallel_round(clients, server, cfg, round, &[])?;
    if (round + 1) % cfg.sfl_avg_period == 0 {
        average_client_models(clients, cfg, &mut out)?;
    }
    Ok(out)
}

fn average_client_models(clients: &mut [ClientState], cfg: &ProtocolConfig, out: &mut RoundOutput) -> Result<()> {
    let format = WireFormat::Dense {
        bits: cfg.compression.client_weight_bits,
    };
    let step = usize::MAX;
    for c in clients.iter() {
        let shape = [c.head().param_count()];
        out.trace.push(out.round, step, Phase::Sync, Node::Client(c.id), Node::Fed, PayloadKind::ClientModel, &shape, format);
    }
    let total: usize = clients.iter().map(|c| c.shard.len()).sum();
    let weights: Vec<f64> = clients.iter().map(|c| c.shard.len() as f64 / total as f64).collect();
    let heads: Vec<&SegmentState> = clients.iter().map(|c| c.head()).collect();
    let averaged = SegmentState::weighted_average(&heads, &weights)?;
    for c in clients.iter_mut() {
        c.segments[0].set_params(averaged.clone())?;
        let shape = [c.head().param_count()];
        out.trace.push(out.round, step, Phase::Sync, Node::Fed, Node::Client(c.id), PayloadKind::ClientModel, &shape, format);
    }
    Ok(())
}
