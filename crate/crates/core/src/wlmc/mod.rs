//! Worldline Monte Carlo for the spin-boson action with a retarded kernel.

pub mod chain;
pub mod cluster;
pub mod metropolis;
pub mod stats;
pub mod worldline;

pub use chain::{
    estimate, init_worldline, random_worldline, run_chain, run_chains, ChainEstimates, ChainState, Schedule,
    UpdateKind,
};
pub use cluster::{cluster_sweep, ClusterScratch};
pub use metropolis::{metropolis_kink_pair, proposals_per_sweep};
pub use stats::{DerivedEstimate, MCEstimate};
pub use worldline::{measure, ObservableSample, Worldline};
