//! Flux matrices `A_i = ∫ m mᵀ Ω_i dΩ` and their spectral sign splittings.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::pn::basis::{sphere_quadrature, SHBasis};

/// The three P_N streaming matrices with precomputed sign splittings
/// `A_i^± = Q Λ^± Qᵀ` (so `A_i^+ + A_i^- = A_i` and `|A_i| = A_i^+ - A_i^-`
/// is positive semidefinite).
pub struct FluxMatrices {
    pub a: [DMatrix<f64>; 3],
    pub plus: [DMatrix<f64>; 3],
    pub minus: [DMatrix<f64>; 3],
    /// Largest absolute eigenvalue over all three matrices; the advection
    /// speed bound used by the CFL rule (always <= 1).
    pub spectral_radius: f64,
}

impl FluxMatrices {
    /// Assembles by quadrature of exactness >= 2N + 2, restricted to the
    /// selection-rule pairs |l - l'| = 1, |m - m'| <= 1 (all other entries
    /// vanish; the full-quadrature route is kept in tests as the oracle).
    pub fn build(basis: &SHBasis) -> Result<Self> {
        let n_m = basis.n_moments();
        let quad = sphere_quadrature(basis.degree());
        let values: Vec<Vec<f64>> = quad.iter().map(|(omega, _)| basis.eval(*omega)).collect();

        let mut mats = [
            DMatrix::<f64>::zeros(n_m, n_m),
            DMatrix::<f64>::zeros(n_m, n_m),
            DMatrix::<f64>::zeros(n_m, n_m),
        ];
        let pairs = coupled_pairs(basis);
        for (i, j) in pairs {
            let mut acc = [0.0f64; 3];
            for (q, (omega, w)) in quad.iter().enumerate() {
                let prod = w * values[q][i] * values[q][j];
                acc[0] += prod * omega[0];
                acc[1] += prod * omega[1];
                acc[2] += prod * omega[2];
            }
            for d in 0..3 {
                mats[d][(i, j)] = acc[d];
                mats[d][(j, i)] = acc[d];
            }
        }
        Self::from_assembled(mats)
    }

    /// Full-quadrature assembly without selection rules; O(n_m^2) per node, so
    /// only sensible for small N. Used as the independent assembly oracle.
    pub fn build_dense_oracle(basis: &SHBasis) -> Result<Self> {
        let n_m = basis.n_moments();
        let quad = sphere_quadrature(basis.degree());
        let mut mats = [
            DMatrix::<f64>::zeros(n_m, n_m),
            DMatrix::<f64>::zeros(n_m, n_m),
            DMatrix::<f64>::zeros(n_m, n_m),
        ];
        for (omega, w) in &quad {
            let v = basis.eval(*omega);
            for d in 0..3 {
                let scale = w * omega[d];
                for i in 0..n_m {
                    let vi = scale * v[i];
                    for j in 0..n_m {
                        mats[d][(i, j)] += vi * v[j];
                    }
                }
            }
        }
        Self::from_assembled(mats)
    }

    fn from_assembled(mut mats: [DMatrix<f64>; 3]) -> Result<Self> {
        let mut spectral_radius = 0.0f64;
        let mut plus = Vec::with_capacity(3);
        let mut minus = Vec::with_capacity(3);
        for a in mats.iter_mut() {
            let asym = (a.transpose() - &*a).norm();
            if asym > 1e-10 {
                return Err(Error::Assembly(format!(
                    "flux matrix asymmetry {asym:e} exceeds 1e-10"
                )));
            }
            let sym = (&*a + a.transpose()) * 0.5;
            *a = sym.clone();
            let eig = SymmetricEigen::new(sym);
            let lam_max = eig
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, &l| acc.max(l.abs()));
            if lam_max > 1.0 + 1e-10 {
                return Err(Error::Assembly(format!(
                    "flux-matrix eigenvalue {lam_max} outside [-1, 1]"
                )));
            }
            spectral_radius = spectral_radius.max(lam_max);
            let n = eig.eigenvalues.len();
            let mut lam_p = DMatrix::<f64>::zeros(n, n);
            let mut lam_m = DMatrix::<f64>::zeros(n, n);
            for k in 0..n {
                let l = eig.eigenvalues[k];
                if l > 0.0 {
                    lam_p[(k, k)] = l;
                } else {
                    lam_m[(k, k)] = l;
                }
            }
            let q = &eig.eigenvectors;
            plus.push(q * lam_p * q.transpose());
            minus.push(q * lam_m * q.transpose());
        }
        let [p0, p1, p2]: [DMatrix<f64>; 3] = plus.try_into().unwrap();
        let [m0, m1, m2]: [DMatrix<f64>; 3] = minus.try_into().unwrap();
        Ok(FluxMatrices {
            a: mats,
            plus: [p0, p1, p2],
            minus: [m0, m1, m2],
            spectral_radius,
        })
    }

    pub fn n_moments(&self) -> usize {
        self.a[0].nrows()
    }
}

/// Index pairs (i <= j) allowed by the streaming selection rules: degree
/// changes by one and the azimuthal order by at most one, where for real
/// harmonics Ω_y couples the cosine and sine families (sign-flipped m).
fn coupled_pairs(basis: &SHBasis) -> Vec<(usize, usize)> {
    let n = basis.degree() as i64;
    let mut pairs = Vec::new();
    for l in 0..=n {
        for m in -l..=l {
            let i = basis.index(l as usize, m);
            let lp = l + 1;
            if lp > n {
                continue;
            }
            for mp in [m - 1, m, m + 1, -m - 1, -m, -m + 1] {
                if mp.abs() <= lp {
                    let j = basis.index(lp as usize, mp);
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}
