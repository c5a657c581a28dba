//! Real spherical harmonics, orthonormal on the unit sphere, in the ordering
//! `(m_0^0, m_1^{-1}, m_1^0, m_1^1, ..., m_N^N)` with `(N+1)^2` entries.

use nalgebra::DMatrix;

use crate::linalg::gauss_legendre;

/// Real spherical-harmonics basis up to degree `N`.
#[derive(Debug, Clone)]
pub struct SHBasis {
    degree: usize,
}

impl SHBasis {
    pub fn new(degree: usize) -> Self {
        SHBasis { degree }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of moments, `(N+1)^2`.
    pub fn n_moments(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Flat index of harmonic `(l, m)`.
    pub fn index(&self, l: usize, m: i64) -> usize {
        debug_assert!(l <= self.degree && m.unsigned_abs() as usize <= l);
        l * l + (m + l as i64) as usize
    }

    /// Degree of each flat index.
    pub fn degree_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.n_moments());
        for l in 0..=self.degree {
            for _ in 0..(2 * l + 1) {
                map.push(l);
            }
        }
        map
    }

    /// Evaluates all harmonics at a unit vector.
    ///
    /// Uses the fully normalized associated-Legendre recurrence (no
    /// Condon-Shortley phase); stable up to high degree because factorials
    /// never appear explicitly.
    pub fn eval(&self, omega: [f64; 3]) -> Vec<f64> {
        let n = self.degree;
        let x = omega[2].clamp(-1.0, 1.0); // cos(theta)
        let s = (omega[0] * omega[0] + omega[1] * omega[1]).sqrt(); // sin(theta)
        let phi = omega[1].atan2(omega[0]);

        // p[m][l] would be wasteful; keep the normalized P̄_l^m column by column
        // in m, writing straight into the output slots.
        let mut out = vec![0.0; self.n_moments()];
        let sqrt2 = std::f64::consts::SQRT_2;

        // cos(m phi), sin(m phi) by recurrence.
        let (cp, sp) = (phi.cos(), phi.sin());
        let mut cos_m = vec![1.0; n + 1];
        let mut sin_m = vec![0.0; n + 1];
        for m in 1..=n {
            cos_m[m] = cos_m[m - 1] * cp - sin_m[m - 1] * sp;
            sin_m[m] = sin_m[m - 1] * cp + cos_m[m - 1] * sp;
        }

        // P̄_0^0 carries the 1/sqrt(4 pi) normalization.
        let mut pmm = (1.0 / (4.0 * std::f64::consts::PI)).sqrt();
        for m in 0..=n {
            // Fill column m: l = m..=n.
            let mut p_lm1 = pmm; // P̄_m^m
            let assign = |out: &mut [f64], l: usize, val: f64| {
                let base = l * l + l;
                if m == 0 {
                    out[base] = val;
                } else {
                    out[base + m] = sqrt2 * val * cos_m[m];
                    out[base - m] = sqrt2 * val * sin_m[m];
                }
            };
            assign(&mut out, m, p_lm1);
            if m < n {
                let mut p_l = (2.0 * m as f64 + 3.0).sqrt() * x * p_lm1; // P̄_{m+1}^m
                assign(&mut out, m + 1, p_l);
                for l in (m + 2)..=n {
                    let lf = l as f64;
                    let mf = m as f64;
                    let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                    let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                        .sqrt();
                    let p_next = a * (x * p_l - b * p_lm1);
                    p_lm1 = p_l;
                    p_l = p_next;
                    assign(&mut out, l, p_l);
                }
            }
            if m < n {
                // P̄_{m+1}^{m+1} from P̄_m^m.
                let mf = m as f64;
                pmm *= ((2.0 * mf + 3.0) / (2.0 * mf + 2.0)).sqrt() * s;
            }
        }
        out
    }

    /// Gram matrix under a product quadrature of exactness >= 2N.
    pub fn gram(&self) -> DMatrix<f64> {
        let n_m = self.n_moments();
        let quad = sphere_quadrature(self.degree);
        let mut g = DMatrix::<f64>::zeros(n_m, n_m);
        for (omega, w) in &quad {
            let m = self.eval(*omega);
            for i in 0..n_m {
                for j in i..n_m {
                    g[(i, j)] += w * m[i] * m[j];
                }
            }
        }
        for i in 0..n_m {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }
}

/// Product quadrature on S^2 (Gauss-Legendre in cos(theta), uniform in phi)
/// exact for spherical polynomials of degree <= 2N + 2.
pub fn sphere_quadrature(degree: usize) -> Vec<([f64; 3], f64)> {
    let n_theta = degree + 2;
    let n_phi = 2 * degree + 4;
    let (xs, ws) = gauss_legendre(n_theta);
    let wphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut quad = Vec::with_capacity(n_theta * n_phi);
    for (x, wx) in xs.iter().zip(&ws) {
        let s = (1.0 - x * x).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
            quad.push(([s * phi.cos(), s * phi.sin(), *x], wx * wphi));
        }
    }
    quad
}
