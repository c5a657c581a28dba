//! Angular (spherical-harmonics) operators and the spatial finite-volume
//! advection operator shared by the low-rank and full-rank collided solvers.

mod basis;
mod matrices;
mod operators;

pub use basis::{sphere_quadrature, SHBasis};
pub use matrices::FluxMatrices;
pub use operators::{
    apply_scatter, apply_upwind_divergence, beam_moments, upwind_derivative, ScatterNode,
    ScatterOperator, StencilSide,
};
