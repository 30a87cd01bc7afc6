//! Decentralized multi-robot human intent prediction.
//!
//! A deterministic factory-floor simulator feeds per-robot occlusion-aware
//! perception. Each robot encodes its view as a human-centred star graph, runs
//! a two-layer GCN, shares the human-node embedding with its peers over a
//! simulated lossy transport, and feeds its own and the aggregated neighbour
//! embeddings through a GRU to predict and forecast which of four stations the
//! human is heading to. A visibility/confidence weighted vote makes every robot
//! adopt the same decision.
//!
//! The [`harness`] module wires the pieces into datasets, training and
//! evaluation sweeps; [`cli`] exposes them as a command-line tool.

pub mod baselines;
pub mod cli;
pub mod comms;
pub mod consensus;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod models;
pub mod perception;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
pub use world::StationId;
