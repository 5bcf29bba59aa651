//! Topology, per-phase latency and closed-form byte accounting.
//!
//! Rounds are modelled lock-step: every client finishes a phase before any
//! client enters the next, so a round's latency is a sum over phases of the
//! slowest client's time in that phase.

mod latency;
mod topology;
mod volume;

pub use latency::{client_timings, phase_latency, round_latency, ClientPath, LatencyBreakdown, PhaseTime, RoundSpec, Work};
pub use topology::{Allocation, LinkSpec, NodeSpec, SharedPool, Tier, Topology};
pub use volume::comm_volume;
