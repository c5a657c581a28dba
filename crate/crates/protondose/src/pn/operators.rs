//! Discrete operators of the collided equation: second-order upwind
//! divergence on the voxel grid and the diagonal scatter operator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::domain::{DensityGrid, Grid3};
use crate::error::{Error, Result};
use crate::physics::scatter::{scattering_moments, ScatterKernel};
use crate::physics::PseudoTimeMap;
use crate::pn::basis::SHBasis;

/// Which one-sided stencil to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilSide {
    /// Stencil reaching toward lower indices (used with `A_i^+`).
    Minus,
    /// Stencil reaching toward higher indices (used with `A_i^-`).
    Plus,
}

/// Second-order one-sided first derivative along `axis`, applied column-wise
/// to `src` (cells x anything). One layer of zero ghost cells; the outermost
/// upwind cell falls back to a first-order stencil.
pub fn upwind_derivative(
    grid: &Grid3,
    axis: usize,
    side: StencilSide,
    src: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = grid.n_cells();
    assert_eq!(src.nrows(), n, "field rows must match cell count");
    let mut dst = DMatrix::<f64>::zeros(n, src.ncols());
    let counts = grid.counts;
    let stride = [1usize, counts[0], counts[0] * counts[1]];
    let sd = stride[axis];
    let ed = counts[axis];
    let (ta, tb) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let inv_d = 1.0 / grid.delta[axis];
    let half_inv = 0.5 * inv_d;

    let src_slice = src.as_slice();
    dst.as_mut_slice()
        .par_chunks_mut(n)
        .zip(src_slice.par_chunks(n))
        .for_each(|(out, u)| {
            for jb in 0..counts[tb] {
                for ja in 0..counts[ta] {
                    let base = ja * stride[ta] + jb * stride[tb];
                    match side {
                        StencilSide::Minus => {
                            // i = 0: ghost u_{-1} = 0, first order.
                            let c0 = base;
                            out[c0] = u[c0] * inv_d;
                            if ed > 1 {
                                let c1 = base + sd;
                                out[c1] = (3.0 * u[c1] - 4.0 * u[c0]) * half_inv;
                            }
                            for i in 2..ed {
                                let c = base + i * sd;
                                out[c] =
                                    (3.0 * u[c] - 4.0 * u[c - sd] + u[c - 2 * sd]) * half_inv;
                            }
                        }
                        StencilSide::Plus => {
                            let clast = base + (ed - 1) * sd;
                            out[clast] = -u[clast] * inv_d;
                            if ed > 1 {
                                let c = base + (ed - 2) * sd;
                                out[c] = (-3.0 * u[c] + 4.0 * u[c + sd]) * half_inv;
                            }
                            for i in 0..ed.saturating_sub(2) {
                                let c = base + i * sd;
                                out[c] =
                                    (-3.0 * u[c] + 4.0 * u[c + sd] - u[c + 2 * sd]) * half_inv;
                            }
                        }
                    }
                }
            }
        });
    dst
}

/// Divides each row (cell) by the local density.
pub fn scale_rows_by_inv_rho(field: &DMatrix<f64>, density: &DensityGrid) -> DMatrix<f64> {
    let n = field.nrows();
    assert_eq!(n, density.rho.len());
    let mut out = field.clone();
    out.as_mut_slice().par_chunks_mut(n).for_each(|col| {
        for (v, rho) in col.iter_mut().zip(&density.rho) {
            *v /= rho;
        }
    });
    out
}

/// `-A·∇(u/ρ)` with per-axis flux splitting: `A_i^+` rides the stencil biased
/// from below, `A_i^-` the one biased from above; vacuum ghost cells.
pub fn apply_upwind_divergence(
    field: &DMatrix<f64>,
    density: &DensityGrid,
    matrices: &super::FluxMatrices,
) -> DMatrix<f64> {
    let scaled = scale_rows_by_inv_rho(field, density);
    let mut out = DMatrix::<f64>::zeros(field.nrows(), field.ncols());
    for axis in 0..3 {
        if density.grid.counts[axis] == 1 && field.ncols() == matrices.n_moments() {
            // Degenerate axis still leaks through the vacuum boundary; keep it.
        }
        let dm = upwind_derivative(&density.grid, axis, StencilSide::Minus, &scaled);
        let dp = upwind_derivative(&density.grid, axis, StencilSide::Plus, &scaled);
        out -= dm * &matrices.plus[axis];
        out -= dp * &matrices.minus[axis];
    }
    out
}

/// Scatter data at one pseudo-time node.
#[derive(Debug, Clone)]
pub struct ScatterNode {
    pub t: f64,
    pub energy: f64,
    /// Total cross-section per unit density [cm^2/g].
    pub sigma_t: f64,
    /// Per-degree Legendre moments G_ll (length N+1).
    pub g: Vec<f64>,
    /// Per-degree deficits Σ_t - G_ll >= 0.
    pub deficits: Vec<f64>,
}

/// Per-pseudo-time-node diagonal scatter operator over the (l, m) ordering;
/// the entry for harmonic degree l uses the Legendre moment G_ll.
pub struct ScatterOperator {
    pub nodes: Vec<ScatterNode>,
    /// Degree of each flat moment index.
    pub degree_map: Vec<usize>,
}

impl ScatterOperator {
    /// Builds nodes at the given pseudo-times from a kernel; `None` kernel
    /// yields a scatter-free operator (all zeros).
    pub fn build(
        kernel: Option<&dyn ScatterKernel>,
        pseudo_time: &PseudoTimeMap,
        times: &[f64],
        basis: &SHBasis,
    ) -> Result<Self> {
        let n = basis.degree();
        let mut nodes = Vec::with_capacity(times.len());
        for &t in times {
            let energy = pseudo_time.energy_of_pseudo_time(t)?;
            let node = match kernel {
                Some(k) => {
                    let m = scattering_moments(k, energy, n)?;
                    for (l, d) in m.deficits.iter().enumerate() {
                        if *d < -1e-12 * m.sigma_t.abs() {
                            return Err(Error::Validation(format!(
                                "scatter operator not dissipative at degree {l}: deficit {d}"
                            )));
                        }
                    }
                    ScatterNode {
                        t,
                        energy,
                        sigma_t: m.sigma_t,
                        g: m.g,
                        deficits: m.deficits.iter().map(|d| d.max(0.0)).collect(),
                    }
                }
                None => ScatterNode {
                    t,
                    energy,
                    sigma_t: 0.0,
                    g: vec![0.0; n + 1],
                    deficits: vec![0.0; n + 1],
                },
            };
            nodes.push(node);
        }
        Ok(ScatterOperator {
            nodes,
            degree_map: basis.degree_map(),
        })
    }

    /// Index of the node whose pseudo-time is closest to `t`.
    pub fn node_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (k, node) in self.nodes.iter().enumerate() {
            let d = (node.t - t).abs();
            if d < dist {
                dist = d;
                best = k;
            }
        }
        best
    }

    /// Damping rates `λ_i = Σ_t - G_ll` expanded over the flat moment index.
    pub fn damping_diag(&self, node: usize) -> Vec<f64> {
        let nd = &self.nodes[node];
        self.degree_map.iter().map(|&l| nd.deficits[l]).collect()
    }
}

/// `(-Σ_t I + G) ρ(x) u`: diagonal in the moment index, pointwise in space.
pub fn apply_scatter(
    field: &DMatrix<f64>,
    op: &ScatterOperator,
    density: &DensityGrid,
    node: usize,
) -> DMatrix<f64> {
    let lambda = op.damping_diag(node);
    assert_eq!(field.ncols(), lambda.len(), "moment count mismatch");
    let n = field.nrows();
    let mut out = field.clone();
    out.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let lam = lambda[j];
            for (v, rho) in col.iter_mut().zip(&density.rho) {
                *v *= -lam * rho;
            }
        });
    out
}

/// Modal image `m(Ω_in)` of the delta-in-angle uncollided flux.
pub fn beam_moments(basis: &SHBasis, direction: [f64; 3]) -> DVector<f64> {
    DVector::from_vec(basis.eval(direction))
}
