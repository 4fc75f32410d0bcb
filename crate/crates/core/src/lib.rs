//! Smooth, strongly convex distributed optimization over networks.
//!
//! The crate provides the optimal decentralized dual methods (single-step and
//! multi-step with Chebyshev-accelerated gossip), the centralized accelerated
//! baseline through a master node, EXTRA and DIGing, a composite (proximal)
//! dual variant, worst-case instances with their lower-bound curves, and an
//! experiment harness that runs everything under a simulated-time cost model:
//! one unit per local gradient or conjugate computation and `tau` per
//! communication round.

pub mod bench;
pub mod block;
pub mod composite;
pub mod error;
pub mod gossip;
pub mod lower_bounds;
pub mod objectives;
pub mod solvers;
pub mod topology;

pub use block::ParameterBlock;
pub use error::{Error, Result};
