//! Vanilla (sequential) split learning.

use rand::seq::SliceRandom;

use super::client::ClientState;
use super::config::ProtocolConfig;
use super::parallel::{check_canonical, parallel_step};
use super::trace::{Node, PayloadKind, Phase, RoundOutput};
use crate::compression::WireFormat;
use crate::nn::SegmentState;
use crate::rng::{self, tag};
use crate::Result;

/// Fixed client visiting order plus the client that trained last.
///
/// Before a client trains, it receives the client-side model of the previous
/// trainer, relayed through the server.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitOrder {
    order: Vec<usize>,
    last: Option<usize>,
}

impl VisitOrder {
    /// Seeded permutation of `0..clients`, fixed for the whole run.
    pub fn new(seed: u64, clients: usize) -> Self {
        let mut order: Vec<usize> = (0..clients).collect();
        order.shuffle(&mut rng::stream(seed, &[tag::VISIT]));
        Self { order, last: None }
    }

    pub fn from_order(order: Vec<usize>) -> Self {
        Self { order, last: None }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Client index that trained most recently.
    pub fn last(&self) -> Option<usize> {
        self.last
    }
}

/// One vanilla SL round: every client in visiting order runs a full local
/// epoch against the shared server segment.
pub fn run_round_vanilla_sl(
    clients: &mut [ClientState],
    server: &mut SegmentState,
    visit: &mut VisitOrder,
    cfg: &ProtocolConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_canonical(clients)?;
    let mut out = RoundOutput::new(round, clients.len());
    let format = WireFormat::Dense {
        bits: cfg.compression.client_weight_bits,
    };
    let mut step = 0;
    for &ci in &visit.order.clone() {
        if let Some(prev) = visit.last.filter(|&p| p != ci) {
            let model = clients[prev].segments[0].clone();
            let shape = [model.param_count()];
            let (from, to) = (clients[prev].id, clients[ci].id);
            out.trace.push(round, step, Phase::Relay, Node::Client(from), Node::Server, PayloadKind::ClientModel, &shape, format);
            out.trace.push(round, step, Phase::Relay, Node::Server, Node::Client(to), PayloadKind::ClientModel, &shape, format);
            clients[ci].segments[0] = model;
        }
        for rows in clients[ci].epoch_batches(cfg.seed, round) {
            parallel_step(clients, &[(ci, rows)], server, &[], cfg, step, &mut out)?;
            step += 1;
        }
        visit.last = Some(ci);
    }
    Ok(out)
}
