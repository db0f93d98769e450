//! Simulation and verification toolkit for continuous-time distributed
//! optimal consensus over switching graphs.
//!
//! Each agent runs
//!
//! ```text
//! dx_i/dt = sum_{j in N_i(t)} a_ij(x, t) (x_j - x_i) + b_i (P_i(x_i) - x_i)
//! ```
//!
//! where `P_i` is the projection onto its private closed convex set. When the
//! sets share a point and the graph is jointly connected often enough, the
//! agents agree on a point of the intersection.

pub mod convexsets;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod scenario;
pub mod suite;
pub mod topology;

pub use convexsets::{ConvexSet, ConvexSetSpec, DykstraConfig, IntersectionOracle, Point};
pub use error::{Error, Result};
pub use topology::{CertificationReport, DigraphSnapshot, SwitchingTopology, TopologySpec};
