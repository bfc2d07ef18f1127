//! Lattice simulation of the symbiotic branching model, the parabolic
//! Anderson model and the discrete heat equation on periodic boxes, with a
//! Monte Carlo layer that checks their structural identities.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod heat;
pub mod lattice;
pub mod particle;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Field, Geometry};
