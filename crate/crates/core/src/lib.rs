//! Joint task offloading, ISAC beamforming and computing-resource allocation
//! for cell-free massive MIMO networks with integrated communication,
//! computation and sensing.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`] draws network geometry, path loss and noise-normalised
//!   channels for one Monte-Carlo trial.
//! * [`metrics`] evaluates rates, sensing SINR, latencies, power draw and the
//!   budget constraints of the min-max latency problem.
//! * [`conic`] is the convex solver layer (LP / SOCP) used by every block.
//! * [`offload`], [`beamform`] and [`resources`] are the three blocks of the
//!   alternating optimisation.
//! * [`orchestrator`] runs the full alternating loop, the single-tier
//!   benchmarks, the brute-force oracle, Monte-Carlo sweeps and CSV output.

pub mod beamform;
pub mod conic;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod offload;
pub mod orchestrator;
pub mod resources;
pub mod scenario;

pub use error::{Error, Result};
