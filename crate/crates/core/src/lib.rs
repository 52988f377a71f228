//! Length-constrained average distance networks.
//!
//! Given a discrete probability measure `mu` on `R^d`, a length budget `l`
//! and an exponent `p >= 1`, search for a compact connected network `Sigma`
//! (a straight-edge embedded graph) with total length at most `l` that
//! minimizes
//!
//! ```text
//! J_p(Sigma) = sum_i w_i * dist(x_i, Sigma)^p
//! ```
//!
//! The descent direction is the barycentre field of the closest-point
//! projection, smoothed into a Lipschitz displacement. The [`verify`] module
//! evaluates structural properties of minimizers (tree structure, triple
//! junctions, atoms at endpoints, vanishing net field) on solver outputs.

pub mod cli;
pub mod error;
pub mod functional;
pub mod geom;
pub mod measure;
pub mod network;
pub mod perturb;
pub mod plot;
pub mod projection;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use measure::{DiscreteMeasure, DensitySpec, HullSummary};
pub use network::{Network, SampledNetwork, TopologyReport};
pub use projection::{ProjectionOptions, ProjectionTable, PushforwardMeasure};
