use serde::{Deserialize, Serialize};

use crate::compression::CompressionSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Fedavg,
    VanillaSl,
    Sfl,
    Psl,
    Epsl,
    Ushaped,
    AsyncPsl,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 7] = [
        ProtocolKind::Fedavg,
        ProtocolKind::VanillaSl,
        ProtocolKind::Sfl,
        ProtocolKind::Psl,
        ProtocolKind::Epsl,
        ProtocolKind::Ushaped,
        ProtocolKind::AsyncPsl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::Fedavg => "fedavg",
            ProtocolKind::VanillaSl => "vanilla_sl",
            ProtocolKind::Sfl => "sfl",
            ProtocolKind::Psl => "psl",
            ProtocolKind::Epsl => "epsl",
            ProtocolKind::Ushaped => "ushaped",
            ProtocolKind::AsyncPsl => "async_psl",
        }
    }

    /// Protocols that exchange smashed data across a cut.
    pub fn is_split(&self) -> bool {
        !matches!(self, ProtocolKind::Fedavg)
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown protocol {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Cut layer: layers `0..cut` run on the client.
    pub cut: usize,
    /// Second cut for U-shaped SL: layers `cut2..L` run on the client.
    pub cut2: Option<usize>,
    /// Fraction of clients whose backward pass is aggregated (EPSL).
    pub epsl_phi: f64,
    /// Rounds between client-model averaging (SFL).
    pub sfl_avg_period: usize,
    /// Gradients the asynchronous server waits for before updating.
    pub async_quorum: usize,
    pub lr: f64,
    pub rounds: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub compression: CompressionSpec,
}

impl ProtocolConfig {
    pub fn new(kind: ProtocolKind, cut: usize) -> Self {
        Self {
            kind,
            cut,
            cut2: None,
            epsl_phi: 0.0,
            sfl_avg_period: 1,
            async_quorum: 1,
            lr: 0.05,
            rounds: 1,
            batch_size: 16,
            seed: 0,
            compression: CompressionSpec::default(),
        }
    }

    /// Checks the configuration against a model of `layers` layers and
    /// `clients` clients.
    pub fn validate(&self, layers: usize, clients: usize) -> Result<()> {
        if clients == 0 {
            return Err(Error::config("at least one client is required"));
        }
        if self.cut > layers {
            return Err(Error::config(format!("cut {} outside 0..={layers}", self.cut)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.epsl_phi) {
            return Err(Error::config(format!("epsl_phi must be in [0, 1], got {}", self.epsl_phi)));
        }
        if self.sfl_avg_period < 1 {
            return Err(Error::config("sfl_avg_period must be >= 1"));
        }
        if self.kind == ProtocolKind::AsyncPsl && !(1..=clients).contains(&self.async_quorum) {
            return Err(Error::config(format!(
                "async_quorum must be in 1..={clients}, got {}",
                self.async_quorum
            )));
        }
        if self.kind == ProtocolKind::Ushaped {
            let cut2 = self
                .cut2
                .ok_or_else(|| Error::config("ushaped requires cut2"))?;
            if !(0 < self.cut && self.cut < cut2 && cut2 < layers) {
                return Err(Error::config(format!(
                    "ushaped requires 0 < cut < cut2 < {layers}, got cut={} cut2={cut2}",
                    self.cut
                )));
            }
        }
        self.compression.validate()
    }

    /// Size of the EPSL aggregated group, `ceil(phi * clients)`.
    pub fn epsl_group_size(&self, clients: usize) -> usize {
        if self.kind != ProtocolKind::Epsl || self.epsl_phi <= 0.0 {
            return 0;
        }
        ((self.epsl_phi * clients as f64 - 1e-9).ceil() as usize).min(clients)
    }

    /// Whether SFL averages client models at the end of `round` (0-based).
    pub fn sfl_averages(&self, round: usize) -> bool {
        self.kind == ProtocolKind::Sfl && (round + 1) % self.sfl_avg_period == 0
    }
}
