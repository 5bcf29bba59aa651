//! Deterministic simulator and planning library for split edge learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`nn`]: a small layer-wise network engine whose forward and
//!   backward passes can be cut at any layer boundary.
//! - [`compression`]: quantization and top-k operators for cut-layer payloads
//!   and low-precision weights.
//! - [`protocols`]: round engines for FedAvg, vanilla SL, SFL, PSL, EPSL,
//!   U-shaped SL and asynchronous PSL, each emitting a [`protocols::MessageTrace`].
//! - [`network`]: topology, per-phase latency and closed-form byte accounting.
//! - [`planner`]: min-max allocation, split-layer selection, client selection,
//!   hierarchical and multi-hop placement.
//! - [`data`]: synthetic datasets and Dirichlet partitioning.

pub mod compression;
pub mod data;
pub mod error;
pub mod network;
pub mod nn;
pub mod planner;
pub mod protocols;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
