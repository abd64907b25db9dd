//! Synchronous and asynchronous PageRank over partitioned web graphs.
//!
//! The rank vector is computed either by the synchronous power method or by
//! `p` units of execution (UEs) that each own a row block and update it
//! from whatever peer values they currently hold. A monitor detects global
//! termination from persistence-filtered convergence reports.

pub mod engine;
pub mod kernels;
pub mod ranking;
pub mod termination;
pub mod transport;
pub mod webgraph;

/// Identifier of a computing UE, or of the monitor (`p`).
pub type UeId = u32;

pub use engine::{run_async, AsyncConfig, AsyncResult, EngineError, Schedule, Script};
pub use kernels::{dense_oracle, run_sync, GoogleParams, Kernel, SyncResult};
pub use ranking::compare_rankings;
pub use webgraph::{generate_synthetic, partition_rows, AdjacencyGraph, Partition};
