use super::asynchronous::{run_round_async_psl, AsyncPsl, ClientTiming};
use super::client::{ClientState, Shard};
use super::config::{ProtocolConfig, ProtocolKind};
use super::fedavg::run_round_fedavg;
use super::parallel::{run_round_epsl, run_round_psl, run_round_sfl};
use super::sequential::{run_round_vanilla_sl, VisitOrder};
use super::trace::RoundOutput;
use super::ushaped::run_round_ushaped;
use crate::nn::{argmax_rows, ModelProfile, SegmentState};
use crate::{Error, Result, Tensor};

/// A training run: clients, the server-side model and per-protocol state.
///
/// Every client starts from the same initial weights, drawn from
/// `cfg.seed`. For FedAvg the server segment is the global model.
#[derive(Debug, Clone)]
pub struct Session {
    cfg: ProtocolConfig,
    profile: ModelProfile,
    clients: Vec<ClientState>,
    server: SegmentState,
    visit: Option<VisitOrder>,
    async_state: Option<AsyncPsl>,
    round: usize,
}

impl Session {
    /// `timings` drive the asynchronous engine and are ignored otherwise; when
    /// absent every phase takes one simulated second.
    pub fn new(
        profile: &ModelProfile,
        shards: Vec<Shard>,
        cfg: ProtocolConfig,
        timings: Option<Vec<ClientTiming>>,
    ) -> Result<Self> {
        let l = profile.len();
        cfg.validate(l, shards.len())?;
        let seed = cfg.seed;
        let (client_ranges, server_range) = match cfg.kind {
            ProtocolKind::Fedavg => (vec![(0, l)], (0, l)),
            ProtocolKind::Ushaped => {
                let cut2 = cfg.cut2.expect("validated");
                (vec![(0, cfg.cut), (cut2, l)], (cfg.cut, cut2))
            }
            _ => (vec![(0, cfg.cut)], (cfg.cut, l)),
        };
        let mut clients = Vec::with_capacity(shards.len());
        for (id, shard) in shards.into_iter().enumerate() {
            let segments = client_ranges
                .iter()
                .map(|&(a, b)| SegmentState::init(profile, a, b, seed))
                .collect::<Result<Vec<_>>>()?;
            clients.push(ClientState::new(id, shard, segments, cfg.batch_size)?);
        }
        let server = SegmentState::init(profile, server_range.0, server_range.1, seed)?;
        let visit = (cfg.kind == ProtocolKind::VanillaSl).then(|| VisitOrder::new(seed, clients.len()));
        let async_state = if cfg.kind == ProtocolKind::AsyncPsl {
            let unit = ClientTiming {
                fwd: 1.0,
                up: 1.0,
                server: 1.0,
                down: 1.0,
                bwd: 1.0,
            };
            Some(AsyncPsl::new(timings.unwrap_or_else(|| vec![unit; clients.len()]))?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            profile: profile.clone(),
            clients,
            server,
            visit,
            async_state,
            round: 0,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &SegmentState {
        &self.server
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn visit_order(&self) -> Option<&VisitOrder> {
        self.visit.as_ref()
    }

    pub fn run_round(&mut self) -> Result<RoundOutput> {
        let r = self.round;
        let (c, s, cfg) = (&mut self.clients, &mut self.server, &self.cfg);
        let out = match cfg.kind {
            ProtocolKind::Fedavg => run_round_fedavg(c, s, cfg, r),
            ProtocolKind::VanillaSl => run_round_vanilla_sl(c, s, self.visit.as_mut().expect("visit order"), cfg, r),
            ProtocolKind::Sfl => run_round_sfl(c, s, cfg, r),
            ProtocolKind::Psl => run_round_psl(c, s, cfg, r),
            ProtocolKind::Epsl => run_round_epsl(c, s, cfg, r),
            ProtocolKind::Ushaped => run_round_ushaped(c, s, cfg, r),
            ProtocolKind::AsyncPsl => {
                run_round_async_psl(c, s, self.async_state.as_mut().expect("async state"), cfg, r)
            }
        }?;
        self.round += 1;
        Ok(out)
    }

    /// The complete model as seen by client index `ci`.
    pub fn full_model(&self, ci: usize) -> Result<SegmentState> {
        let c = self
            .clients
            .get(ci)
            .ok_or_else(|| Error::config(format!("no client index {ci}")))?;
        match self.cfg.kind {
            ProtocolKind::Fedavg => Ok(self.server.clone()),
            ProtocolKind::Ushaped => SegmentState::concat(&[&c.segments[0], &self.server, &c.segments[1]]),
            _ => SegmentState::concat(&[&c.segments[0], &self.server]),
        }
    }

    /// Test accuracy. FedAvg uses the global model, vanilla SL the client that
    /// trained last, and every other protocol the mean over clients.
    pub fn evaluate(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::config("empty evaluation set"));
        }
        let evaluated: Vec<usize> = match self.cfg.kind {
            ProtocolKind::Fedavg => vec![0],
            ProtocolKind::VanillaSl => {
                let v = self.visit.as_ref().expect("visit order");
                vec![v.last().unwrap_or(v.order()[0])]
            }
            _ => (0..self.clients.len()).collect(),
        };
        let mut acc = 0.0;
        for &ci in &evaluated {
            let model = self.full_model(ci)?;
            let (logits, _) = model.forward(x)?;
            let hits = argmax_rows(&logits).iter().zip(labels).filter(|(p, y)| p == y).count();
            acc += hits as f64 / labels.len() as f64;
        }
        Ok(acc / evaluated.len() as f64)
    }
}
