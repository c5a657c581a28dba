//! Deterministic proton dose engine.
//!
//! The flux is split into an uncollided part, ray-traced with continuous
//! slowing down and straggling, and a collided part evolved as spherical-
//! harmonics moments on a low-rank manifold in pseudo-time by a rank-adaptive
//! augmented BUG integrator. Outputs are 3D deposited-energy maps, rank
//! histories, and low-rank vs full-rank comparison reports.

pub mod analysis;
pub mod config;
pub mod dlra;
pub mod domain;
pub mod error;
pub mod linalg;
pub mod output;
pub mod physics;
pub mod pipeline;
pub mod pn;
pub mod raytracer;
pub mod solver;

pub use error::{Error, Result};
