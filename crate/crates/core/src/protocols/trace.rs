//! Message traces and compute ledgers emitted by the round engines.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compression::{WireBytes, WireFormat};

/// Trace endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Client(usize),
    Server,
    /// The SFL model-averaging server.
    Fed,
    /// A single downlink transmission received by a group of clients.
    Broadcast,
}

impl Node {
    pub fn is_client(&self) -> bool {
        matches!(self, Node::Client(_) | Node::Broadcast)
    }

    pub fn parse(s: &str) -> Option<Node> {
        match s {
            "server" => Some(Node::Server),
            "fed" => Some(Node::Fed),
            "broadcast" => Some(Node::Broadcast),
            _ => s.strip_prefix("client")?.parse().ok().map(Node::Client),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Client(i) => write!(f, "client{i}"),
            Node::Server => f.write_str("server"),
            Node::Fed => f.write_str("fed"),
            Node::Broadcast => f.write_str("broadcast"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Activation,
    Grad,
    ClientModel,
    ServerModel,
    Label,
}

impl PayloadKind {
    pub fn is_smashed(&self) -> bool {
        matches!(self, PayloadKind::Activation | PayloadKind::Grad)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PayloadKind::Activation => "activation",
            PayloadKind::Grad => "grad",
            PayloadKind::ClientModel => "client_model",
            PayloadKind::ServerModel => "server_model",
            PayloadKind::Label => "label",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    Backward,
    /// Model distribution or averaging.
    Sync,
    /// Vanilla-SL client model hand-off.
    Relay,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Forward => "forward",
            Phase::Backward => "backward",
            Phase::Sync => "sync",
            Phase::Relay => "relay",
        }
    }
}

/// Bits used for label payloads.
pub const LABEL_BITS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub step: usize,
    pub phase: Phase,
    pub src: Node,
    pub dst: Node,
    pub kind: PayloadKind,
    /// Declared payload shape, batch dimension included.
    pub shape: Vec<usize>,
    pub format: WireFormat,
    /// Value bytes: `format.payload_bytes(shape)`.
    pub bytes: u64,
    /// Scale header bytes for quantized payloads.
    pub header_bytes: u64,
}

impl Message {
    pub fn wire_bytes(&self) -> u64 {
        self.bytes + self.header_bytes
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageTrace {
    pub messages: Vec<Message>,
}

impl MessageTrace {
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        round: usize,
        step: usize,
        phase: Phase,
        src: Node,
        dst: Node,
        kind: PayloadKind,
        shape: &[usize],
        format: WireFormat,
    ) -> WireBytes {
        let wire = WireBytes {
            payload: format.payload_bytes(shape),
            header: format.header_bytes(),
        };
        self.messages.push(Message {
            round,
            step,
            phase,
            src,
            dst,
            kind,
            shape: shape.to_vec(),
            format,
            bytes: wire.payload,
            header_bytes: wire.header,
        });
        wire
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn extend(&mut self, other: MessageTrace) {
        self.messages.extend(other.messages);
    }

    /// Wire bytes including headers.
    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(Message::wire_bytes).sum()
    }

    /// Value bytes of activation and gradient payloads, headers excluded.
    pub fn smashed_bytes(&self) -> u64 {
        self.messages.iter().filter(|m| m.kind.is_smashed()).map(|m| m.bytes).sum()
    }

    pub fn count(&self, kind: PayloadKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }

    pub fn bytes_where(&self, pred: impl Fn(&Message) -> bool) -> u64 {
        self.messages.iter().filter(|m| pred(m)).map(Message::wire_bytes).sum()
    }

    /// Wire bytes per directed link.
    pub fn bytes_by_link(&self) -> BTreeMap<(Node, Node), u64> {
        let mut out = BTreeMap::new();
        for m in &self.messages {
            *out.entry((m.src, m.dst)).or_insert(0) += m.wire_bytes();
        }
        out
    }

    /// Same trace with round numbers cleared, for comparing runs that differ
    /// only in bookkeeping.
    pub fn without_rounds(&self) -> Vec<Message> {
        self.messages
            .iter()
            .cloned()
            .map(|mut m| {
                m.round = 0;
                m
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Forward,
    Backward,
}

/// Abstract compute cycles spent per node and pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComputeLedger {
    pub cycles: BTreeMap<(Node, Pass), f64>,
}

impl ComputeLedger {
    pub fn add(&mut self, node: Node, pass: Pass, cycles: f64) {
        *self.cycles.entry((node, pass)).or_insert(0.0) += cycles;
    }

    pub fn get(&self, node: Node, pass: Pass) -> f64 {
        self.cycles.get(&(node, pass)).copied().unwrap_or(0.0)
    }

    pub fn server_backward(&self) -> f64 {
        self.get(Node::Server, Pass::Backward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessRecord {
    pub client: usize,
    pub staleness: u64,
}

/// Everything one engine round produced besides the updated model state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundOutput {
    pub round: usize,
    pub trace: MessageTrace,
    pub compute: ComputeLedger,
    pub loss_sum: f64,
    pub samples: usize,
    /// Asynchronous engine only.
    pub staleness: Vec<StalenessRecord>,
    /// Processed batches per client.
    pub participation: Vec<usize>,
    /// Simulated seconds elapsed, when the engine tracks time itself.
    pub sim_time: Option<f64>,
    /// Server-side parameter updates applied.
    pub server_updates: usize,
}

impl RoundOutput {
    pub(crate) fn new(round: usize, clients: usize) -> Self {
        Self {
            round,
            participation: vec![0; clients],
            ..Default::default()
        }
    }

    pub fn mean_loss(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.loss_sum / self.samples as f64
        }
    }

    pub fn max_staleness(&self) -> u64 {
        self.staleness.iter().map(|s| s.staleness).max().unwrap_or(0)
    }

    pub fn mean_staleness(&self) -> f64 {
        if self.staleness.is_empty() {
            0.0
        } else {
            self.staleness.iter().map(|s| s.staleness as f64).sum::<f64>() / self.staleness.len() as f64
        }
    }
}
