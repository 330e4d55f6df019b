//! Green energies and quadratic Wasserstein distances of empirical measures
//! on the flat unit torus and the unit sphere.

pub mod cli;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod green;
pub mod numerics;
pub mod rng;
pub mod stats;
pub mod surfaces;
pub mod transport;

pub use error::{Error, Result};
