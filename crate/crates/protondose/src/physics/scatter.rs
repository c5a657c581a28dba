//! Elastic scattering kernels for water and their Legendre moments.
//!
//! Kernels are differential macroscopic cross-sections per unit density,
//! `Σ_s(E, μ)` in cm^2/(g sr) with `μ = Ω·Ω'`. The moment routine integrates
//! them with a composite Gauss-Legendre rule whose panels are geometrically
//! graded toward `μ = ±1`; Coulomb kernels are too forward-peaked for any
//! single-panel rule.

use crate::error::{Error, Result};
use crate::linalg::{gauss_legendre_on, legendre_all};
use crate::physics::proton_kinematics;

/// Bohr radius [cm].
const BOHR_RADIUS: f64 = 0.529_177_210_903e-8;
/// hbar*c [MeV cm].
const HBARC: f64 = 197.326_980_4e-13;
/// e^2 = alpha*hbar*c [MeV cm].
const ESQ: f64 = 1.439_976_4e-13;
/// Fine-structure constant.
const ALPHA: f64 = 1.0 / 137.035_999;
/// Avogadro constant [1/mol].
const AVOGADRO: f64 = 6.022_140_76e23;
/// Molar mass of water [g/mol].
const WATER_MOLAR_MASS: f64 = 18.0153;
/// Radiation length of water [g/cm^2].
const WATER_RADIATION_LENGTH: f64 = 36.08;
/// Multiple-scattering constant [MeV].
const MS_CONSTANT: f64 = 13.6;

/// Pluggable evaluator for the water scattering kernel.
pub trait ScatterKernel: Send + Sync {
    /// `Σ_s(E, μ)` [cm^2/(g sr)].
    fn eval(&self, energy: f64, mu: f64) -> f64;

    /// Kernel at `μ = 1 - x` for small `x`. Forward-peaked kernels override
    /// this to work in `x` directly; forming `1 - x` in f64 flattens any
    /// angular structure finer than ~1e-16.
    fn eval_from_one(&self, energy: f64, x: f64) -> f64 {
        self.eval(energy, 1.0 - x)
    }
}

/// Wraps a closure as a kernel.
pub struct FnKernel<F: Fn(f64, f64) -> f64 + Send + Sync>(pub F);

impl<F: Fn(f64, f64) -> f64 + Send + Sync> ScatterKernel for FnKernel<F> {
    fn eval(&self, energy: f64, mu: f64) -> f64 {
        (self.0)(energy, mu)
    }
}

/// One atomic species in a compound: charge number and atoms per gram.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub z: f64,
    pub atoms_per_gram: f64,
}

/// Screened Coulomb kernel with the Molière screening angle, summed over the
/// elements of a compound. The screening parameter per element is
/// `η = χ_α²/4` with `χ_α² = χ_0²(1.13 + 3.76 (αZ/β)²)` and
/// `χ_0 = ħ/(p a_TF)`, `a_TF = 0.885 a_0 Z^{-1/3}`; the amplitude uses the
/// Z(Z+1) electron-scattering correction.
pub struct MoliereKernel {
    elements: Vec<Element>,
}

impl MoliereKernel {
    pub fn new(elements: Vec<Element>) -> Self {
        MoliereKernel { elements }
    }

    /// Liquid water: two hydrogens and one oxygen per molecule.
    pub fn water() -> Self {
        let per_gram = AVOGADRO / WATER_MOLAR_MASS;
        MoliereKernel::new(vec![
            Element {
                z: 1.0,
                atoms_per_gram: 2.0 * per_gram,
            },
            Element {
                z: 8.0,
                atoms_per_gram: per_gram,
            },
        ])
    }

    /// Screening parameter η for element `z` at energy `e`.
    pub fn eta(&self, e: f64, z: f64) -> f64 {
        let (pc, beta, _) = proton_kinematics(e);
        let a_tf = 0.885 * BOHR_RADIUS * z.powf(-1.0 / 3.0);
        let chi0_sq = (HBARC / (pc * a_tf)).powi(2);
        let chi_a_sq = chi0_sq * (1.13 + 3.76 * (ALPHA * z / beta).powi(2));
        0.25 * chi_a_sq
    }

    fn amplitude(&self, e: f64, el: &Element) -> f64 {
        let (_, _, pv) = proton_kinematics(e);
        el.atoms_per_gram * el.z * (el.z + 1.0) * (ESQ / pv).powi(2)
    }
}

impl ScatterKernel for MoliereKernel {
    fn eval(&self, energy: f64, mu: f64) -> f64 {
        self.eval_from_one(energy, 1.0 - mu)
    }

    fn eval_from_one(&self, energy: f64, x: f64) -> f64 {
        let mut acc = 0.0;
        for el in &self.elements {
            let eta = self.eta(energy, el.z);
            let amp = self.amplitude(energy, el);
            let d = x + 2.0 * eta;
            acc += amp / (d * d);
        }
        acc
    }
}

/// Energy-dependent transport cross-section model used to calibrate the
/// single-term screened Rutherford kernel.
pub trait TransportXs: Send + Sync {
    /// `Σ_tr(E) = 2π ∫ (1-μ) Σ_s dμ` [cm^2/g].
    fn sigma_tr(&self, e: f64) -> f64;
}

/// `Σ_tr(E) = (13.6 MeV / pv)^2 / X_0` for water.
pub struct HighlandWater;

impl TransportXs for HighlandWater {
    fn sigma_tr(&self, e: f64) -> f64 {
        let (_, _, pv) = proton_kinematics(e);
        (MS_CONSTANT / pv).powi(2) / WATER_RADIATION_LENGTH
    }
}

/// Single-term screened Rutherford kernel
/// `Σ_s(E, μ) = C(E) η(1+η) / (1+2η-μ)^2`, with the amplitude `C(E)` chosen
/// so the kernel reproduces a prescribed transport cross-section. The
/// screening parameter is an explicit width choice; small values give a more
/// forward-peaked kernel.
pub struct ScreenedRutherfordKernel<T: TransportXs> {
    eta: f64,
    transport: T,
}

impl ScreenedRutherfordKernel<HighlandWater> {
    /// Water kernel calibrated to the Highland transport cross-section.
    pub fn water(eta: f64) -> Result<Self> {
        Self::new(eta, HighlandWater)
    }
}

impl<T: TransportXs> ScreenedRutherfordKernel<T> {
    pub fn new(eta: f64, transport: T) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Validation(format!(
                "screening parameter must be positive, got {eta}"
            )));
        }
        Ok(ScreenedRutherfordKernel { eta, transport })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn amplitude(&self, e: f64) -> f64 {
        // Σ_tr = 2π C η [(1+η) ln((1+η)/η) - 1] in closed form.
        let eta = self.eta;
        let shape =
            2.0 * std::f64::consts::PI * eta * ((1.0 + eta) * ((1.0 + eta) / eta).ln() - 1.0);
        self.transport.sigma_tr(e) / shape
    }

    /// Closed-form total cross-section `Σ_t(E) = π C(E)` [cm^2/g].
    pub fn sigma_t(&self, e: f64) -> f64 {
        std::f64::consts::PI * self.amplitude(e)
    }

    /// Closed-form transport cross-section [cm^2/g].
    pub fn sigma_tr(&self, e: f64) -> f64 {
        self.transport.sigma_tr(e)
    }
}

impl<T: TransportXs> ScatterKernel for ScreenedRutherfordKernel<T> {
    fn eval(&self, energy: f64, mu: f64) -> f64 {
        self.eval_from_one(energy, 1.0 - mu)
    }

    fn eval_from_one(&self, energy: f64, x: f64) -> f64 {
        let eta = self.eta;
        let d = x + 2.0 * eta;
        self.amplitude(energy) * eta * (1.0 + eta) / (d * d)
    }
}

/// Bilinear table over an (energy, μ) grid; the fallback when no analytic
/// model applies. Queries clamp to the grid edges.
pub struct TabulatedKernel {
    energies: Vec<f64>,
    mus: Vec<f64>,
    /// Row-major: value[i_energy * mus.len() + i_mu].
    values: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(energies: Vec<f64>, mus: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if energies.len() < 2 || mus.len() < 2 {
            return Err(Error::Validation("tabulated kernel needs a 2x2 grid".into()));
        }
        if values.len() != energies.len() * mus.len() {
            return Err(Error::Validation("kernel table size mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "kernel table must be finite and nonnegative".into(),
            ));
        }
        for w in energies.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation("kernel energies must increase".into()));
            }
        }
        for w in mus.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation("kernel mu grid must increase".into()));
            }
        }
        Ok(TabulatedKernel {
            energies,
            mus,
            values,
        })
    }

    fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
        if x <= grid[0] {
            return (0, 0.0);
        }
        if x >= grid[grid.len() - 1] {
            return (grid.len() - 2, 1.0);
        }
        let i = grid.partition_point(|&g| g <= x) - 1;
        let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
        (i, t)
    }
}

impl ScatterKernel for TabulatedKernel {
    fn eval(&self, energy: f64, mu: f64) -> f64 {
        let (ie, te) = Self::bracket(&self.energies, energy);
        let (im, tm) = Self::bracket(&self.mus, mu);
        let nm = self.mus.len();
        let v00 = self.values[ie * nm + im];
        let v01 = self.values[ie * nm + im + 1];
        let v10 = self.values[(ie + 1) * nm + im];
        let v11 = self.values[(ie + 1) * nm + im + 1];
        (1.0 - te) * ((1.0 - tm) * v00 + tm * v01) + te * ((1.0 - tm) * v10 + tm * v11)
    }
}

/// Legendre moments of a kernel at one energy.
#[derive(Debug, Clone)]
pub struct ScatteringMoments {
    /// Total cross-section `Σ_t = G_00` [cm^2/g].
    pub sigma_t: f64,
    /// `G_kk = 2π ∫ P_k(μ) Σ_s(E, μ) dμ`, k = 0..=N.
    pub g: Vec<f64>,
    /// Cancellation-free deficits `Σ_t - G_kk = 2π ∫ (1-P_k) Σ_s dμ` (>= 0
    /// for admissible kernels); the quantity the moment solver damps with.
    pub deficits: Vec<f64>,
}

impl ScatteringMoments {
    pub fn degree(&self) -> usize {
        self.g.len() - 1
    }
}

/// Options for the moment quadrature.
#[derive(Debug, Clone, Copy)]
pub struct MomentOptions {
    /// Relative-change tolerance between successive order doublings.
    pub tol: f64,
    /// Initial per-panel Gauss-Legendre order.
    pub min_order: usize,
    /// Per-panel order at which refinement gives up.
    pub max_order: usize,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            tol: 1e-10,
            min_order: 8,
            max_order: 4096,
        }
    }
}

/// Quadrature panels: the backward hemisphere and midrange are integrated in
/// μ with mild grading toward -1; the forward cone is integrated in the
/// peak-resolving variable `x = 1 - μ` with geometric grading down to 1e-26.
struct Panels {
    /// (lo, hi) panels in μ covering [-1, 0.75].
    mu: Vec<(f64, f64)>,
    /// (lo, hi) panels in x covering (0, 0.25].
    x: Vec<(f64, f64)>,
}

fn graded_panels() -> Panels {
    let mu_cuts = [
        -1.0, -0.999999, -0.9999, -0.99, -0.9, -0.5, 0.0, 0.5, 0.75,
    ];
    let mu = mu_cuts.windows(2).map(|w| (w[0], w[1])).collect();
    let mut x_cuts = vec![0.25];
    let mut w = 0.25;
    while w > 1e-26 {
        w *= 0.25;
        x_cuts.push(w);
    }
    x_cuts.push(0.0);
    let x = x_cuts.windows(2).map(|w| (w[1], w[0])).collect();
    Panels { mu, x }
}

/// Accumulates `(Σ_t, deficits)` with `Σ_t = 2π ∫ Σ_s dμ` and
/// `deficit_k = 2π ∫ (1 - P_k) Σ_s dμ`; both integrands are nonnegative, so
/// the sums carry no cancellation.
fn moments_at_order(
    kernel: &dyn ScatterKernel,
    e: f64,
    n: usize,
    order: usize,
    panels: &Panels,
) -> Result<(f64, Vec<f64>)> {
    let mut sigma_t = 0.0;
    let mut deficits = vec![0.0; n + 1];
    let mut absorb = |wi: f64, v: f64, mu: f64, loc: f64| -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Accuracy(format!(
                "kernel not integrable near mu = {loc}"
            )));
        }
        if v < 0.0 {
            return Err(Error::Validation(format!(
                "kernel negative at (E, mu) = ({e}, {loc})"
            )));
        }
        let p = legendre_all(n, mu);
        sigma_t += wi * v;
        for k in 0..=n {
            deficits[k] += wi * v * (1.0 - p[k]);
        }
        Ok(())
    };
    for &(lo, hi) in &panels.mu {
        let (xs, ws) = gauss_legendre_on(order, lo, hi);
        for (xi, wi) in xs.iter().zip(&ws) {
            absorb(*wi, kernel.eval(e, *xi), *xi, *xi)?;
        }
    }
    for &(lo, hi) in &panels.x {
        let (xs, ws) = gauss_legendre_on(order, lo, hi);
        for (xi, wi) in xs.iter().zip(&ws) {
            absorb(*wi, kernel.eval_from_one(e, *xi), 1.0 - *xi, 1.0 - *xi)?;
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    for d in deficits.iter_mut() {
        *d *= two_pi;
    }
    Ok((sigma_t * two_pi, deficits))
}

/// Computes `G_kk` for k = 0..=N at energy `e` with the default options.
pub fn scattering_moments(
    kernel: &dyn ScatterKernel,
    e: f64,
    n: usize,
) -> Result<ScatteringMoments> {
    scattering_moments_with(kernel, e, n, MomentOptions::default())
}

/// Moment quadrature with explicit options. The per-panel order is doubled
/// until every moment and deficit changes by less than `tol` (relative);
/// failure to converge is an accuracy error.
pub fn scattering_moments_with(
    kernel: &dyn ScatterKernel,
    e: f64,
    n: usize,
    opts: MomentOptions,
) -> Result<ScatteringMoments> {
    let panels = graded_panels();
    let mut order = opts.min_order.max(4);
    let (mut sigma_t, mut deficits) = moments_at_order(kernel, e, n, order, &panels)?;
    loop {
        let next_order = order * 2;
        if next_order > opts.max_order {
            return Err(Error::Accuracy(format!(
                "moment quadrature did not converge by per-panel order {order}"
            )));
        }
        let (st2, def2) = moments_at_order(kernel, e, n, next_order, &panels)?;
        let scale = st2.abs().max(1e-300);
        let st_ok = (sigma_t - st2).abs() <= opts.tol * scale;
        let def_ok = deficits.iter().zip(&def2).all(|(a, b)| {
            (a - b).abs() <= (opts.tol * b.abs()).max(1e-15 * scale)
        });
        sigma_t = st2;
        deficits = def2;
        order = next_order;
        if st_ok && def_ok {
            break;
        }
    }
    // Moments assembled from deficits so that Σ_t - G_kk carries no
    // cancellation error; G_00 = Σ_t holds exactly.
    let g: Vec<f64> = deficits.iter().map(|d| sigma_t - d).collect();
    Ok(ScatteringMoments {
        sigma_t,
        g,
        deficits,
    })
}

/// Fixed-order evaluation without the refinement loop; the oracle against
/// which the adaptive result is cross-checked in tests.
pub fn scattering_moments_fixed_order(
    kernel: &dyn ScatterKernel,
    e: f64,
    n: usize,
    order: usize,
) -> Result<ScatteringMoments> {
    let panels = graded_panels();
    let (sigma_t, deficits) = moments_at_order(kernel, e, n, order, &panels)?;
    let g = deficits.iter().map(|d| sigma_t - d).collect();
    Ok(ScatteringMoments {
        sigma_t,
        g,
        deficits,
    })
}
