use std::collections::BTreeMap;

use super::latency::{model_wire, RoundSpec};
use crate::protocols::{epsl_group, Node, ProtocolKind, VisitOrder};
use crate::{Error, Result};

/// Wire bytes per directed link for one round, computed from shapes alone.
/// Equals the byte sums of the trace the engines emit for the same round.
pub fn comm_volume(spec: &RoundSpec) -> Result<BTreeMap<(Node, Node), u64>> {
    let steps = spec.steps()?;
    let cfg = spec.cfg;
    let m = spec.clients();
    let comp = &cfg.compression;
    let mut out = BTreeMap::new();
    let mut add = |src, dst, bytes: u64| *out.entry((src, dst)).or_insert(0) += bytes;
    let max_steps = steps.iter().copied().max().unwrap_or(0);

    match cfg.kind {
        ProtocolKind::Fedavg => {
            let p = spec.profile.param_count(0, spec.profile.len());
            for c in 0..m {
                add(Node::Server, Node::Client(c), model_wire(p, comp.server_weight_bits));
                add(Node::Client(c), Node::Server, model_wire(p, comp.client_weight_bits));
            }
        }
        ProtocolKind::Ushaped => {
            let (a1, a2) = (spec.smashed_bytes(cfg.cut), spec.smashed_bytes(cfg.cut2.expect("validated")));
            for (c, &s) in steps.iter().enumerate() {
                let s = s as u64;
                add(Node::Client(c), Node::Server, s * (a1 + a2));
                add(Node::Server, Node::Client(c), s * (a1 + a2));
            }
        }
        ProtocolKind::VanillaSl => {
            let act = spec.smashed_bytes(cfg.cut);
            let model = model_wire(spec.profile.param_count(0, cfg.cut), comp.client_weight_bits);
            let order = VisitOrder::new(cfg.seed, m).order().to_vec();
            let mut prev = if spec.round == 0 { None } else { order.last().copied() };
            for &c in &order {
                if let Some(p) = prev.filter(|&p| p != c) {
                    add(Node::Client(p), Node::Server, model);
                    add(Node::Server, Node::Client(c), model);
                }
                let s = steps[c] as u64;
                add(Node::Client(c), Node::Server, s * (act + spec.label_bytes()));
                add(Node::Server, Node::Client(c), s * act);
                prev = Some(c);
            }
        }
        ProtocolKind::AsyncPsl if cfg.async_quorum < m => {
            return Err(Error::Unsupported(format!(
                "per-link bytes of asynchronous PSL with quorum {} < {m} depend on event timing",
                cfg.async_quorum
            )));
        }
        ProtocolKind::Psl | ProtocolKind::Sfl | ProtocolKind::Epsl | ProtocolKind::AsyncPsl => {
            let act = spec.smashed_bytes(cfg.cut);
            let group = epsl_group(cfg, m, spec.round);
            for s in 0..max_steps {
                let mut broadcast = false;
                for c in (0..m).filter(|&c| steps[c] > s) {
                    add(Node::Client(c), Node::Server, act + spec.label_bytes());
                    if group.contains(&c) {
                        broadcast = true;
                    } else {
                        add(Node::Server, Node::Client(c), act);
                    }
                }
                if broadcast {
                    add(Node::Server, Node::Broadcast, act);
                }
            }
            if cfg.sfl_averages(spec.round) {
                let model = model_wire(spec.profile.param_count(0, cfg.cut), comp.client_weight_bits);
                for c in 0..m {
                    add(Node::Client(c), Node::Fed, model);
                    add(Node::Fed, Node::Client(c), model);
                }
            }
        }
    }
    Ok(out)
}
