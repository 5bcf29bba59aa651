//! Round engines for every supported training protocol.
//!
//! Each engine advances client and server state by one round and returns a
//! [`RoundOutput`] holding the message trace, compute ledger and loss. All
//! engines iterate clients in ascending id so that runs are reproducible bit
//! for bit from the seed.

mod asynchronous;
mod centralized;
mod client;
mod config;
mod fedavg;
mod parallel;
mod sequential;
mod session;
mod trace;
mod ushaped;

pub use asynchronous::{run_round_async_psl, AsyncPsl, ClientTiming};
pub use centralized::{centralized_epoch, centralized_step};
pub use client::{epoch_batches, ClientState, Shard};
pub use config::{ProtocolConfig, ProtocolKind};
pub use fedavg::run_round_fedavg;
pub use parallel::{epsl_group, run_round_epsl, run_round_psl, run_round_sfl};
pub use sequential::{run_round_vanilla_sl, VisitOrder};
pub use session::Session;
pub use trace::{
    ComputeLedger, Message, MessageTrace, Node, Pass, PayloadKind, Phase, RoundOutput, StalenessRecord, LABEL_BITS,
};
pub use ushaped::run_round_ushaped;
