//! Topological risk parity.
//!
//! Maps signed cross-sectional signals and a return history to long/short
//! weights with a target gross leverage. The return history defines a
//! correlation-distance minimum spanning tree; the tree is rooted (at a hub,
//! a designated asset, or a dummy market node with sector ETFs beneath it),
//! and each asset's signal is scaled by a topological factor that decays with
//! the branching along its path from the root.
//!
//! Modules:
//!
//! - [`data_model`]: panels, signals, configuration, the activity filter
//! - [`dependence`]: correlation, Mantegna distance, Kruskal MST and a brute-force oracle
//! - [`topology`]: rooting and market/sector anchoring
//! - [`propagation`]: factors, normalization, post-processing, [`allocate`]
//! - [`flow_model`]: nested-factor synthetic returns
//! - [`verify`]: seeded property harness behind `trp verify`
//! - [`output`]: CSV, JSON and DOT writers used by the CLI

pub mod data_model;
pub mod dependence;
pub mod error;
pub mod flow_model;
pub mod output;
pub mod propagation;
pub mod topology;
pub mod verify;

pub use data_model::{
    active_set, load_returns, load_signals, recent_magnitude, ActiveSet, AssetId, ReturnsPanel, RootMode, SignalVector,
    TrpConfig,
};
pub use dependence::{
    brute_force_mst, build_mst, correlation_matrix, distance_matrix, CorrelationMatrix, DistanceMatrix, SpanningTree,
};
pub use error::{Diagnostic, Result, TrpError};
pub use propagation::{allocate, Allocation, Portfolio, TopoFactors, Variant};
pub use topology::{RootedTopology, SubtreeMass};
