//! Uncollided transport: streaming, out-scattering attenuation, continuous
//! slowing down and straggling along straight rays through the voxel grid.
//!
//! Energy is discretized by discontinuous piecewise polynomials per group
//! (upwinded in the direction of decreasing energy for the slowing-down term,
//! symmetric interior penalty for the straggling term). Along the path the
//! semi-discrete system `dψ/ds = ρ A ψ` has a constant matrix within each
//! cell, so a crossing is propagated by the exact exponential `exp(Δs ρ A)`;
//! the companion `phi1` matrix supplies exact path averages for tallies.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::domain::{gaussian_mass_1d, BeamSource, DensityGrid, EntryFace, Grid3};
use crate::error::{Error, Result};
use crate::linalg::{expm_with_phi1, gauss_legendre_on, legendre_all};
use crate::physics::PhysicsTables;

/// Interior-penalty constant of the straggling discretization.
const SIP_PENALTY: f64 = 10.0;

/// Energy-group mesh with a per-group polynomial basis of order `p`.
#[derive(Debug, Clone)]
pub struct EnergyMesh {
    /// Group edges, strictly decreasing from `E_max` to `E_cutoff`.
    edges: Vec<f64>,
    p: usize,
}

impl EnergyMesh {
    /// Uniform group widths on `[e_cutoff, e_max]`.
    pub fn uniform(e_max: f64, e_cutoff: f64, n_groups: usize, p: usize) -> Result<Self> {
        if !(e_max > e_cutoff) || e_cutoff <= 0.0 {
            return Err(Error::Validation(format!(
                "need 0 < e_cutoff < e_max, got [{e_cutoff}, {e_max}]"
            )));
        }
        if n_groups == 0 {
            return Err(Error::Validation("need at least one energy group".into()));
        }
        if p > 2 {
            return Err(Error::Validation(format!(
                "polynomial order must be 0, 1 or 2, got {p}"
            )));
        }
        let mut edges = Vec::with_capacity(n_groups + 1);
        for k in 0..=n_groups {
            edges.push(e_max - (e_max - e_cutoff) * k as f64 / n_groups as f64);
        }
        edges[n_groups] = e_cutoff;
        Ok(EnergyMesh { edges, p })
    }

    pub fn n_groups(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn order(&self) -> usize {
        self.p
    }

    /// Coefficients per group.
    pub fn n_basis(&self) -> usize {
        self.p + 1
    }

    /// Total degrees of freedom.
    pub fn n_dof(&self) -> usize {
        self.n_groups() * self.n_basis()
    }

    pub fn e_max(&self) -> f64 {
        self.edges[0]
    }

    pub fn e_cutoff(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    /// Bounds of group `g` as `(lo, hi)`.
    pub fn group_bounds(&self, g: usize) -> (f64, f64) {
        (self.edges[g + 1], self.edges[g])
    }

    /// Group containing energy `e`.
    pub fn group_of(&self, e: f64) -> Result<usize> {
        if e < self.e_cutoff() || e > self.e_max() {
            return Err(Error::Domain(format!(
                "energy {e} outside mesh coverage [{}, {}]",
                self.e_cutoff(),
                self.e_max()
            )));
        }
        let idx = self.edges.partition_point(|&edge| edge > e);
        Ok(idx.saturating_sub(1).min(self.n_groups() - 1))
    }

    /// Orthonormal basis values `φ_0..φ_p` of group `g` at energy `e`.
    pub fn basis_at(&self, g: usize, e: f64) -> Vec<f64> {
        let (lo, hi) = self.group_bounds(g);
        let width = hi - lo;
        let xi = (2.0 * (e - lo) / width - 1.0).clamp(-1.0, 1.0);
        let leg = legendre_all(self.p, xi);
        (0..=self.p)
            .map(|i| ((2 * i + 1) as f64 / width).sqrt() * leg[i])
            .collect()
    }

    /// d/dE of the basis functions of group `g` at energy `e`.
    fn basis_deriv_at(&self, g: usize, e: f64) -> Vec<f64> {
        let (lo, hi) = self.group_bounds(g);
        let width = hi - lo;
        let xi = (2.0 * (e - lo) / width - 1.0).clamp(-1.0, 1.0);
        // P0' = 0, P1' = 1, P2' = 3x.
        let dleg = [0.0, 1.0, 3.0 * xi];
        (0..=self.p)
            .map(|i| ((2 * i + 1) as f64 / width).sqrt() * dleg[i] * 2.0 / width)
            .collect()
    }
}

/// The spectral transport operator `A` with `dψ/ds = ρ A ψ` along a ray, plus
/// the linear functionals used by tallies. Everything is per unit density;
/// the density enters as a scalar factor per cell.
struct EnergyOperator {
    matrix: DMatrix<f64>,
    /// `∫ S(E) φ_dof dE` per dof: the CSD energy-loss moment.
    s_moment: DVector<f64>,
    /// `∫ E φ_dof dE` per dof.
    e_moment: DVector<f64>,
    /// Upwind outflow functional at the cutoff edge: `S(E_cut) φ_dof(E_cut)`
    /// on the lowest group.
    cutoff_flux: DVector<f64>,
}

const GL_ASSEMBLY: usize = 8;

impl EnergyOperator {
    fn assemble(mesh: &EnergyMesh, physics: &PhysicsTables) -> Result<Self> {
        let ng = mesh.n_groups();
        let nb = mesh.n_basis();
        let ndof = mesh.n_dof();
        let mut a = DMatrix::<f64>::zeros(ndof, ndof);
        let mut s_moment = DVector::<f64>::zeros(ndof);
        let mut e_moment = DVector::<f64>::zeros(ndof);

        // Per-group volume terms.
        for g in 0..ng {
            let (lo, hi) = mesh.group_bounds(g);
            let (xs, ws) = gauss_legendre_on(GL_ASSEMBLY, lo, hi);
            let base = g * nb;
            for (x, w) in xs.iter().zip(&ws) {
                let phi = mesh.basis_at(g, *x);
                let dphi = mesh.basis_deriv_at(g, *x);
                let s = physics.stopping.eval(*x)?;
                let sigma_t = physics.sigma_t(*x)?;
                for j in 0..nb {
                    s_moment[base + j] += w * s * phi[j];
                    e_moment[base + j] += w * x * phi[j];
                    for i in 0..nb {
                        // -Σ_t(E) ψ, projected.
                        a[(base + j, base + i)] -= w * sigma_t * phi[j] * phi[i];
                        // CSD volume term -∫ φ' S ψ.
                        a[(base + j, base + i)] -= w * dphi[j] * s * phi[i];
                    }
                }
            }
        }

        // CSD edge terms, upwinded from the high-energy side.
        for g in 0..ng {
            let (lo, hi) = mesh.group_bounds(g);
            let base = g * nb;
            let phi_hi = mesh.basis_at(g, hi);
            let phi_lo = mesh.basis_at(g, lo);
            // Outflow through the group's low edge (drains group g).
            let s_lo = physics.stopping.eval(lo)?;
            for j in 0..nb {
                for i in 0..nb {
                    a[(base + j, base + i)] -= s_lo * phi_lo[j] * phi_lo[i];
                }
            }
            // Inflow through the high edge from group g-1 (zero at E_max).
            if g > 0 {
                let up = (g - 1) * nb;
                let s_hi = physics.stopping.eval(hi)?;
                let up_lo = mesh.basis_at(g - 1, hi);
                for j in 0..nb {
                    for i in 0..nb {
                        a[(base + j, up + i)] += s_hi * phi_hi[j] * up_lo[i];
                    }
                }
            }
        }

        // Straggling: ψ -> u = Proj(T ψ), then the interior-penalty second
        // derivative, scaled by 1/2. Boundary edges carry no terms, which is
        // the zero-flux closure.
        let mut has_straggling = false;
        for g in 0..ng {
            let (lo, hi) = mesh.group_bounds(g);
            if physics.straggling.eval(0.5 * (lo + hi))? != 0.0 {
                has_straggling = true;
                break;
            }
        }
        if has_straggling {
            // u = MT ψ (per-group projection of T(E) ψ).
            let mut mt = DMatrix::<f64>::zeros(ndof, ndof);
            for g in 0..ng {
                let (lo, hi) = mesh.group_bounds(g);
                let (xs, ws) = gauss_legendre_on(GL_ASSEMBLY, lo, hi);
                let base = g * nb;
                for (x, w) in xs.iter().zip(&ws) {
                    let phi = mesh.basis_at(g, *x);
                    let t = physics.straggling.eval(*x)?;
                    for j in 0..nb {
                        for i in 0..nb {
                            mt[(base + j, base + i)] += w * t * phi[j] * phi[i];
                        }
                    }
                }
            }
            // Bilinear form of the (negative) second derivative.
            let mut sip = DMatrix::<f64>::zeros(ndof, ndof);
            for g in 0..ng {
                let (lo, hi) = mesh.group_bounds(g);
                let (xs, ws) = gauss_legendre_on(GL_ASSEMBLY, lo, hi);
                let base = g * nb;
                for (x, w) in xs.iter().zip(&ws) {
                    let dphi = mesh.basis_deriv_at(g, *x);
                    for j in 0..nb {
                        for i in 0..nb {
                            sip[(base + j, base + i)] += w * dphi[j] * dphi[i];
                        }
                    }
                }
            }
            // Interior edges between group g-1 (above) and g (below).
            for g in 1..ng {
                let e = mesh.group_bounds(g).1;
                let above = (g - 1) * nb;
                let below = g * nb;
                let (lo_a, hi_a) = mesh.group_bounds(g - 1);
                let (lo_b, hi_b) = mesh.group_bounds(g);
                let h_e = 0.5 * ((hi_a - lo_a) + (hi_b - lo_b));
                let pen = SIP_PENALTY * (mesh.p as f64 + 1.0).powi(2) / h_e;
                let phi_a = mesh.basis_at(g - 1, e);
                let phi_b = mesh.basis_at(g, e);
                let dphi_a = mesh.basis_deriv_at(g - 1, e);
                let dphi_b = mesh.basis_deriv_at(g, e);
                // Jump [v] = v_above - v_below, average {v} = mean. Each dof
                // contributes (jump-signed value, derivative).
                let side = |j: usize| -> (f64, f64, usize) {
                    // (signed value, derivative, dof base) for test/trial index
                    // j in 0..2nb: first nb above, then nb below.
                    if j < nb {
                        (phi_a[j], dphi_a[j], above + j)
                    } else {
                        (-phi_b[j - nb], dphi_b[j - nb], below + j - nb)
                    }
                };
                for j in 0..2 * nb {
                    let (vj, dj, row) = side(j);
                    for i in 0..2 * nb {
                        let (vi, di, colm) = side(i);
                        sip[(row, colm)] += -(0.5 * di * vj + 0.5 * dj * vi) + pen * vi * vj;
                    }
                }
            }
            // ∫ φ ∂²u ≈ -a_SIP(u, φ); straggling contributes ½ of it.
            a -= 0.5 * &sip * &mt;
        }

        // Cutoff outflow functional.
        let mut cutoff_flux = DVector::<f64>::zeros(ndof);
        let g_last = ng - 1;
        let e_cut = mesh.e_cutoff();
        let s_cut = physics.stopping.eval(e_cut)?;
        let phi_cut = mesh.basis_at(g_last, e_cut);
        for j in 0..nb {
            cutoff_flux[g_last * nb + j] = s_cut * phi_cut[j];
        }

        Ok(EnergyOperator {
            matrix: a,
            s_moment,
            e_moment,
            cutoff_flux,
        })
    }
}

/// Beam spectrum coefficients for unit weight, truncated to the mesh range
/// and renormalized so the injected weight is exact.
fn spectrum_coefficients(mesh: &EnergyMesh, beam: &BeamSource) -> Result<DVector<f64>> {
    let ng = mesh.n_groups();
    let nb = mesh.n_basis();
    let mut coef = DVector::<f64>::zeros(mesh.n_dof());
    if beam.energy_sigma == 0.0 {
        // Projection of a delta line at the mean energy.
        let g = mesh.group_of(beam.energy_mean)?;
        let phi = mesh.basis_at(g, beam.energy_mean);
        for i in 0..nb {
            coef[g * nb + i] = phi[i];
        }
        return Ok(coef);
    }
    let mass = gaussian_mass_1d(
        mesh.e_cutoff(),
        mesh.e_max(),
        beam.energy_mean,
        beam.energy_sigma,
    );
    if mass <= 0.0 {
        return Err(Error::Validation(
            "beam spectrum has no mass inside the energy mesh".into(),
        ));
    }
    let norm = 1.0 / (mass * beam.energy_sigma * (2.0 * std::f64::consts::PI).sqrt());
    for g in 0..ng {
        let (lo, hi) = mesh.group_bounds(g);
        let (xs, ws) = gauss_legendre_on(16, lo, hi);
        for (x, w) in xs.iter().zip(&ws) {
            let z = (x - beam.energy_mean) / beam.energy_sigma;
            let val = norm * (-0.5 * z * z).exp();
            let phi = mesh.basis_at(g, *x);
            for i in 0..nb {
                coef[g * nb + i] += w * val * phi[i];
            }
        }
    }
    Ok(coef)
}

/// Global energy bookkeeping of a trace; energies in MeV, absolute.
#[derive(Debug, Clone, Default)]
pub struct TraceBalance {
    /// Particle weight actually injected (Gaussian mass inside the face).
    pub injected_weight: f64,
    /// Kinetic energy injected, from the discrete initial states.
    pub injected_energy: f64,
    /// Energy carried out through the far face.
    pub exit_energy: f64,
    /// Energy deposited by continuous slowing down.
    pub csd_deposited: f64,
    /// Energy deposited locally by particles crossing the cutoff.
    pub subcutoff_deposited: f64,
}

/// Per-cell, per-group uncollided flux and its deposition tallies.
///
/// Storage is one contiguous slab per transverse column, so rays trace in
/// parallel without write conflicts and merges stay deterministic.
pub struct UncollidedFlux {
    grid: Grid3,
    mesh: EnergyMesh,
    face: EntryFace,
    /// `[column][along * ndof + dof]`. Cell-average flux per group is clipped
    /// nonnegative at accumulation time.
    data: Vec<f64>,
    /// Deposited energy per cell `[column][along]` [MeV]: CSD part.
    dose_csd: Vec<f64>,
    /// Deposited energy per cell [MeV]: sub-cutoff local deposit.
    dose_subcutoff: Vec<f64>,
    /// Flux mass removed by the nonnegativity clip (diagnostic).
    pub clipped_mass: f64,
    pub balance: TraceBalance,
}

impl UncollidedFlux {
    fn column_counts(grid: &Grid3, face: EntryFace) -> (usize, usize, usize) {
        let (a, b) = face.transverse();
        (grid.counts[a], grid.counts[b], grid.counts[face.axis()])
    }

    fn column_of_cell(&self, cell: usize) -> (usize, usize) {
        let (ix, iy, iz) = self.grid.unflat(cell);
        let coords = [ix, iy, iz];
        let (a, b) = self.face.transverse();
        let (na, _, _) = Self::column_counts(&self.grid, self.face);
        let col = coords[a] + na * coords[b];
        (col, coords[self.face.axis()])
    }

    pub fn mesh(&self) -> &EnergyMesh {
        &self.mesh
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    /// Raw uncollided scalar flux `ψ_u(E)` at a cell (flat grid index).
    pub fn flux_at(&self, cell: usize, e: f64) -> Result<f64> {
        let g = self.mesh.group_of(e)?;
        let ndof = self.mesh.n_dof();
        let nb = self.mesh.n_basis();
        let (col, along) = self.column_of_cell(cell);
        let n_along = self.grid.counts[self.face.axis()];
        let base = (col * n_along + along) * ndof + g * nb;
        let phi = self.mesh.basis_at(g, e);
        let mut v = 0.0;
        for i in 0..nb {
            v += self.data[base + i] * phi[i];
        }
        Ok(v)
    }

    /// Transformed flux `ψ̃_u(t, x) = ρ(x) S(E(t)) ψ_u(E(t), x)`: the value
    /// the collided in-scattering source consumes.
    pub fn transformed_flux_at(
        &self,
        density: &DensityGrid,
        physics: &PhysicsTables,
        cell: usize,
        e: f64,
    ) -> Result<f64> {
        Ok(density.rho[cell] * physics.stopping.eval(e)? * self.flux_at(cell, e)?)
    }

    /// Total uncollided deposition per cell in grid order [MeV].
    pub fn dose_grid_order(&self) -> Vec<f64> {
        let n = self.grid.n_cells();
        let n_along = self.grid.counts[self.face.axis()];
        let mut out = vec![0.0; n];
        for (cell, slot) in out.iter_mut().enumerate() {
            let (col, along) = self.column_of_cell(cell);
            *slot = self.dose_csd[col * n_along + along]
                + self.dose_subcutoff[col * n_along + along];
        }
        out
    }

    /// Energy-integrated flux in one cell (track-length density).
    pub fn integrated_flux(&self, cell: usize) -> f64 {
        let ndof = self.mesh.n_dof();
        let nb = self.mesh.n_basis();
        let (col, along) = self.column_of_cell(cell);
        let n_along = self.grid.counts[self.face.axis()];
        let base = (col * n_along + along) * ndof;
        let mut total = 0.0;
        for g in 0..self.mesh.n_groups() {
            let (lo, hi) = self.mesh.group_bounds(g);
            total += (hi - lo).sqrt() * self.data[base + g * nb];
        }
        total
    }
}

/// Traces one ray per entry-face cell midpoint through the grid.
///
/// Rays are independent and traced in parallel; each writes only its own
/// column slab, and the scalar tallies merge in column order, so the result
/// is bitwise reproducible for any worker count.
pub fn trace_all(
    beam: &BeamSource,
    density: &DensityGrid,
    physics: &PhysicsTables,
    mesh: &EnergyMesh,
) -> Result<UncollidedFlux> {
    beam.validate()?;
    let grid = &density.grid;
    if mesh.e_max() > physics.e_max + 1e-9 || mesh.e_cutoff() < physics.e_cutoff - 1e-9 {
        return Err(Error::Validation(
            "energy mesh exceeds physics table coverage".into(),
        ));
    }
    if beam.energy_mean < mesh.e_cutoff() || beam.energy_mean > mesh.e_max() {
        return Err(Error::Validation(
            "beam mean energy outside the energy mesh".into(),
        ));
    }

    let op = EnergyOperator::assemble(mesh, physics)?;
    let ndof = mesh.n_dof();
    let nb = mesh.n_basis();
    let unit_spectrum = spectrum_coefficients(mesh, beam)?;

    // Exact propagator and path-average matrix per distinct density value.
    let axis = beam.face.axis();
    let ds = grid.delta[axis];
    let mut propagators: HashMap<u64, (DMatrix<f64>, DMatrix<f64>)> = HashMap::new();
    for &rho in &density.rho {
        propagators
            .entry(rho.to_bits())
            .or_insert_with(|| expm_with_phi1(&(&op.matrix * (ds * rho))));
    }

    let (na, nbt, n_along) = UncollidedFlux::column_counts(grid, beam.face);
    let n_cols = na * nbt;
    let march: Vec<usize> = match beam.face.step() {
        1 => (0..n_along).collect(),
        _ => (0..n_along).rev().collect(),
    };

    let cell_of = |col: usize, along: usize| -> usize {
        let ia = col % na;
        let ib = col / na;
        let (a, b) = beam.face.transverse();
        let mut coords = [0usize; 3];
        coords[a] = ia;
        coords[b] = ib;
        coords[axis] = along;
        grid.flat(coords[0], coords[1], coords[2])
    };

    struct ColumnOut {
        balance: TraceBalance,
        clipped: f64,
        error: Option<Error>,
    }

    let mut data = vec![0.0f64; n_cols * n_along * ndof];
    let mut dose_csd = vec![0.0f64; n_cols * n_along];
    let mut dose_sub = vec![0.0f64; n_cols * n_along];
    let v_cell = grid.cell_volume();
    let e_cut = mesh.e_cutoff();

    let results: Vec<ColumnOut> = data
        .par_chunks_mut(n_along * ndof)
        .zip(dose_csd.par_chunks_mut(n_along))
        .zip(dose_sub.par_chunks_mut(n_along))
        .enumerate()
        .map(|(col, ((slab, csd), sub))| {
            let ia = col % na;
            let ib = col / na;
            let w = beam.ray_weight(grid, ia, ib);
            let mut out = ColumnOut {
                balance: TraceBalance::default(),
                clipped: 0.0,
                error: None,
            };
            if w == 0.0 {
                return out;
            }
            let mut psi: DVector<f64> = &unit_spectrum * w;
            out.balance.injected_weight = w;
            out.balance.injected_energy = op.e_moment.dot(&psi);
            for &along in &march {
                let cell = cell_of(col, along);
                let rho = density.rho[cell];
                let (p, phi1) = &propagators[&rho.to_bits()];
                let psi_avg = phi1 * &psi;
                psi = p * &psi;
                if psi.iter().any(|v| !v.is_finite()) {
                    let (ix, iy, iz) = grid.unflat(cell);
                    out.error = Some(Error::StepFailure {
                        step: along,
                        msg: format!("non-finite ray state in cell ({ix}, {iy}, {iz})"),
                    });
                    return out;
                }
                // Tallies from the exact path average.
                let dep = ds * rho * op.s_moment.dot(&psi_avg);
                let cut = ds * rho * op.cutoff_flux.dot(&psi_avg);
                csd[along] += dep;
                sub[along] += e_cut * cut;
                out.balance.csd_deposited += dep;
                out.balance.subcutoff_deposited += e_cut * cut;
                // Path-length weighted flux accumulation with the per-group
                // nonnegativity clip (tallies stay unclipped).
                let scale = ds / v_cell;
                let base = along * ndof;
                for g in 0..mesh.n_groups() {
                    let avg = psi_avg[g * nb];
                    if avg < 0.0 {
                        let (lo, hi) = mesh.group_bounds(g);
                        out.clipped += -(hi - lo).sqrt() * avg * scale;
                        continue;
                    }
                    for i in 0..nb {
                        slab[base + g * nb + i] += psi_avg[g * nb + i] * scale;
                    }
                }
            }
            out.balance.exit_energy = op.e_moment.dot(&psi);
            out
        })
        .collect();

    let mut balance = TraceBalance::default();
    let mut clipped = 0.0;
    for r in results {
        if let Some(e) = r.error {
            return Err(e);
        }
        balance.injected_weight += r.balance.injected_weight;
        balance.injected_energy += r.balance.injected_energy;
        balance.exit_energy += r.balance.exit_energy;
        balance.csd_deposited += r.balance.csd_deposited;
        balance.subcutoff_deposited += r.balance.subcutoff_deposited;
        clipped += r.clipped;
    }

    Ok(UncollidedFlux {
        grid: grid.clone(),
        mesh: mesh.clone(),
        face: beam.face,
        data,
        dose_csd,
        dose_subcutoff: dose_sub,
        clipped_mass: clipped,
        balance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PhantomSpec;
    use crate::physics::scatter::FnKernel;
    use crate::physics::{StoppingPowerTable, StragglingTable};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn water_physics(
        kernel: Option<Arc<dyn crate::physics::scatter::ScatterKernel>>,
    ) -> PhysicsTables {
        PhysicsTables::new(
            StoppingPowerTable::water(),
            StragglingTable::water(),
            kernel,
            1.0,
            94.0,
        )
        .unwrap()
    }

    fn pencil_beam(face: EntryFace) -> BeamSource {
        BeamSource {
            face,
            center: None,
            sigma: 0.1,
            energy_mean: 90.0,
            energy_sigma: 1.0,
            weight: 1.0,
        }
    }

    fn column_grid(nz: usize, dz: f64) -> Grid3 {
        Grid3::new([1, 1, nz], [0.2, 0.2, dz], [0.0; 3]).unwrap()
    }

    #[test]
    fn near_vacuum_passes_through_unchanged() {
        let grid = column_grid(40, 0.2);
        let density = DensityGrid::uniform(grid.clone(), 1e-12);
        let physics = water_physics(None);
        let mesh = EnergyMesh::uniform(94.0, 1.0, 32, 2).unwrap();
        let beam = pencil_beam(EntryFace::ZLow);
        let flux = trace_all(&beam, &density, &physics, &mesh).unwrap();
        assert!(flux.balance.csd_deposited.abs() < 1e-9);
        assert_relative_eq!(
            flux.balance.exit_energy,
            flux.balance.injected_energy,
            max_relative = 1e-9
        );
    }

    #[test]
    fn bragg_peak_depth_matches_csda_range() {
        // Pure slowing down: the deposition maximum sits within one cell of
        // the CSDA range computed from the same stopping-power table.
        let nz = 160;
        let dz = 0.05;
        let grid = column_grid(nz, dz);
        let density = DensityGrid::uniform(grid.clone(), 1.0);
        let physics = water_physics(None);
        let mesh = EnergyMesh::uniform(94.0, 1.0, 128, 2).unwrap();
        let beam = pencil_beam(EntryFace::ZLow);
        let flux = trace_all(&beam, &density, &physics, &mesh).unwrap();
        let dose = flux.dose_grid_order();
        let (imax, _) = dose
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let depth = (imax as f64 + 0.5) * dz;
        let range = physics.pseudo_time.csda_range(90.0).unwrap();
        assert!(
            (depth - range).abs() <= dz,
            "peak depth {depth} vs CSDA range {range}"
        );
    }

    #[test]
    fn attenuation_matches_closed_form() {
        // Constant Σ_t, negligible slowing down, uniform density: the
        // energy-integrated flux decays as exp(-Σ_t s).
        let sigma_t = 0.8;
        let stopping = StoppingPowerTable::from_str_table("0.5 1e-9\n100 1e-9\n").unwrap();
        let straggling = StragglingTable::zero_like(&stopping);
        let kernel = FnKernel(move |_, _| sigma_t / (4.0 * std::f64::consts::PI));
        let physics =
            PhysicsTables::new(stopping, straggling, Some(Arc::new(kernel)), 1.0, 94.0).unwrap();
        let grid = column_grid(30, 0.1);
        let density = DensityGrid::uniform(grid.clone(), 1.0);
        let mesh = EnergyMesh::uniform(94.0, 1.0, 16, 1).unwrap();
        let beam = pencil_beam(EntryFace::ZLow);
        let flux = trace_all(&beam, &density, &physics, &mesh).unwrap();
        let w = flux.balance.injected_weight;
        for iz in [0usize, 5, 17, 29] {
            let cell = grid.flat(0, 0, iz);
            let got = flux.integrated_flux(cell);
            // Exact average of w exp(-Σ_t s) over the crossing, times Δs/V.
            let s0 = iz as f64 * 0.1;
            let exact = w / sigma_t * ((-sigma_t * s0).exp() - (-sigma_t * (s0 + 0.1)).exp())
                / grid.cell_volume();
            assert_relative_eq!(got, exact, max_relative = 1e-3);
        }
    }

    #[test]
    fn energy_balance_csd_only() {
        let grid = column_grid(160, 0.05);
        let density = DensityGrid::uniform(grid.clone(), 1.0);
        let physics = water_physics(None);
        let mesh = EnergyMesh::uniform(94.0, 1.0, 128, 2).unwrap();
        let beam = pencil_beam(EntryFace::ZLow);
        let flux = trace_all(&beam, &density, &physics, &mesh).unwrap();
        let b = &flux.balance;
        let accounted = b.csd_deposited + b.subcutoff_deposited + b.exit_energy;
        assert_relative_eq!(accounted, b.injected_energy, max_relative = 1e-2);
        // The beam stops inside: essentially nothing exits.
        assert!(b.exit_energy < 1e-6 * b.injected_energy);
    }

    #[test]
    fn straggling_alone_conserves_particles() {
        // S ~ 0, Σ_t = 0, T > 0: the E-integrated flux at each depth equals
        // the injected weight (zero-flux energy boundaries).
        let stopping = StoppingPowerTable::from_str_table("0.5 1e-9\n100 1e-9\n").unwrap();
        let straggling = StragglingTable::from_str_table("0.5 0.1\n100 0.1\n").unwrap();
        let physics = PhysicsTables::new(stopping, straggling, None, 1.0, 94.0).unwrap();
        let grid = column_grid(20, 0.4);
        let density = DensityGrid::uniform(grid.clone(), 1.0);
        let mesh = EnergyMesh::uniform(94.0, 1.0, 32, 2).unwrap();
        let beam = BeamSource {
            energy_mean: 47.0,
            energy_sigma: 3.0,
            ..pencil_beam(EntryFace::ZLow)
        };
        let flux = trace_all(&beam, &density, &physics, &mesh).unwrap();
        let w = flux.balance.injected_weight;
        for iz in [0usize, 7, 19] {
            let cell = grid.flat(0, 0, iz);
            let got = flux.integrated_flux(cell) * grid.cell_volume() / 0.4;
            assert_relative_eq!(got, w, max_relative = 1e-6);
        }
    }

    #[test]
    fn group_refinement_improves_peak_position_monotonically() {
        let physics = water_physics(None);
        let grid = column_grid(160, 0.05);
        let density = DensityGrid::uniform(grid.clone(), 1.0);
        let beam = pencil_beam(EntryFace::ZLow);
        let range = physics.pseudo_time.csda_range(90.0).unwrap();
        let mut errs = Vec::new();
        for n_g in [16usize, 32, 64] {
            let mesh = EnergyMesh::uniform(94.0, 1.0, n_g, 2).unwrap();
            let flux = trace_all(&beam, &density, &physics, &mesh).unwrap();
            let dose = flux.dose_grid_order();
            let (imax, _) = dose
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            let depth = (imax as f64 + 0.5) * 0.05;
            errs.push((depth - range).abs());
        }
        assert!(
            errs[0] >= errs[1] && errs[1] >= errs[2],
            "peak error must not grow under refinement: {errs:?}"
        );
    }

    #[test]
    fn group_flux_eval_piecewise_constant() {
        let mesh = EnergyMesh::uniform(10.0, 1.0, 3, 0).unwrap();
        let flux = manual_flux(&mesh, |g, _| if g == 1 { 2.0 } else { 0.0 });
        let (lo, hi) = mesh.group_bounds(1);
        let width = hi - lo;
        for e in [lo + 0.1, 0.5 * (lo + hi), hi - 0.1] {
            // Stored coefficient multiplies φ_0 = 1/sqrt(width).
            assert_relative_eq!(
                flux.flux_at(0, e).unwrap(),
                2.0 / width.sqrt(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn group_flux_eval_reproduces_quadratic() {
        let mesh = EnergyMesh::uniform(10.0, 1.0, 3, 2).unwrap();
        // Coefficients set so the group-1 polynomial is q(E) = E^2.
        let (lo, hi) = mesh.group_bounds(1);
        let (xs, ws) = gauss_legendre_on(8, lo, hi);
        let mut want = [0.0; 3];
        for (x, w) in xs.iter().zip(&ws) {
            let phi = mesh.basis_at(1, *x);
            for i in 0..3 {
                want[i] += w * x * x * phi[i];
            }
        }
        let flux = manual_flux(&mesh, |g, i| if g == 1 { want[i] } else { 0.0 });
        let mid = 0.5 * (lo + hi);
        assert_relative_eq!(
            flux.flux_at(0, mid).unwrap(),
            mid * mid,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            flux.flux_at(0, lo + 0.123).unwrap(),
            (lo + 0.123) * (lo + 0.123),
            max_relative = 1e-12
        );
    }

    #[test]
    fn group_flux_edge_value_matches_direct_basis_evaluation() {
        let mesh = EnergyMesh::uniform(10.0, 1.0, 4, 2).unwrap();
        let coef = |g: usize, i: usize| (g * 3 + i) as f64 * 0.37 - 1.0;
        let flux = manual_flux(&mesh, coef);
        let g = 2;
        let (lo, _) = mesh.group_bounds(g);
        let phi = mesh.basis_at(g, lo);
        let want: f64 = (0..3).map(|i| coef(g, i) * phi[i]).sum();
        assert_relative_eq!(flux.flux_at(0, lo).unwrap(), want, max_relative = 1e-12);
        assert!(flux.flux_at(0, 0.5).is_err(), "outside coverage must error");
    }

    #[test]
    fn transformed_flux_applies_density_and_stopping() {
        let physics = water_physics(None);
        let mesh = EnergyMesh::uniform(94.0, 1.0, 4, 0).unwrap();
        let flux = manual_flux(&mesh, |_, _| 1.0);
        let spec = PhantomSpec {
            grid: flux.grid.clone(),
            background_hu: -400.0,
            overrides: vec![],
        };
        let density = DensityGrid::build(&spec).unwrap();
        let e = 50.0;
        let want = 0.6 * physics.stopping.eval(e).unwrap() * flux.flux_at(0, e).unwrap();
        assert_relative_eq!(
            flux.transformed_flux_at(&density, &physics, 0, e).unwrap(),
            want,
            max_relative = 1e-13
        );
    }

    /// Single-cell flux holder with prescribed coefficients.
    fn manual_flux(mesh: &EnergyMesh, coef: impl Fn(usize, usize) -> f64) -> UncollidedFlux {
        let grid = Grid3::new([1, 1, 1], [1.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let nb = mesh.n_basis();
        let mut data = vec![0.0; mesh.n_dof()];
        for g in 0..mesh.n_groups() {
            for i in 0..nb {
                data[g * nb + i] = coef(g, i);
            }
        }
        UncollidedFlux {
            grid,
            mesh: mesh.clone(),
            face: EntryFace::ZLow,
            data,
            dose_csd: vec![0.0],
            dose_subcutoff: vec![0.0],
            clipped_mass: 0.0,
            balance: TraceBalance::default(),
        }
    }
}
