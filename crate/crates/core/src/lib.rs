//! Mixed-membership communities and spring-model hierarchies in a single
//! directed network, with a per-node latent choice of mechanism.

pub mod cli;
pub mod community;
pub mod em;
pub mod error;
pub mod eval;
pub mod generative;
pub mod graph;
pub mod ising;
pub mod ranking;
pub mod rng;

pub use error::{Error, Result};
