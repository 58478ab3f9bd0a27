//! Frog model laboratory for Cayley graphs of finitely generated abelian groups.
//!
//! * [`group`]: group arithmetic, generating sets and the BFS word metric.
//! * [`walk`]: per-site random walks, exact heat-kernel DP and walk estimators.
//! * [`frog`]: exact discrete-time frog dynamics and activation records.
//! * [`shape`]: Hausdorff distances, rescaling and limit-shape diagnostics.

pub mod error;
pub mod frog;
pub mod group;
pub mod rng;
pub mod shape;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use frog::{ActivationRecord, FrogLattice, SimulationState};
pub use group::{CayleyGraph, GeneratorSet, GroupElement, GroupSpec, WordMetricOracle};
pub use rng::SiteRandomness;
pub use walk::{Time, WalkStats, WalkTrajectory};
