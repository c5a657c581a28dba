//! Small numerical kernels shared across modules: matrix exponentials,
//! Gauss-Legendre rules and Legendre polynomials.

use nalgebra::DMatrix;

/// Padé(13) numerator coefficients for the scaling-and-squaring method.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Matrix exponential by scaling and squaring with a Padé(13) approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);

    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let eye = DMatrix::<f64>::identity(n, n);

    let b = &PADE13;
    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &eye;
    let u = &scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &eye;

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = lhs
        .lu()
        .solve(&rhs)
        .expect("Padé denominator is singular; matrix norm too large");
    for _ in 0..s {
        x = &x * &x;
    }
    x
}

/// Returns `(exp(A), phi1(A))` where `phi1(z) = (e^z - 1)/z`, via the
/// augmented-matrix identity `exp([[A, I], [0, 0]]) = [[e^A, phi1(A)], [0, I]]`.
pub fn expm_with_phi1(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        aug[(i, n + i)] = 1.0;
    }
    let e = expm(&aug);
    let exp_a = e.view((0, 0), (n, n)).into_owned();
    let phi1 = e.view((0, n), (n, n)).into_owned();
    (exp_a, phi1)
}

/// Legendre polynomials P_0..P_n evaluated at `x`, by the Bonnet recurrence.
pub fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n == 0 {
        return p;
    }
    p.push(x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        p.push(next);
    }
    p
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let p = legendre_all(n, x);
            dp = n as f64 * (x * p[n] - p[n - 1]) / (x * x - 1.0);
            let dx = p[n] / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let p = legendre_all(n, 0.0);
        let dp = n as f64 * (0.0 - p[n - 1]) / (-1.0);
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped onto [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&t| half * t).collect(),
    )
}

/// Frobenius-norm distance of `XᵀX` from the identity.
pub fn gram_defect(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let mut s = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let d = g[(i, j)] - if i == j { 1.0 } else { 0.0 };
            s += d * d;
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, -2.0, -1000.0]));
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], 0.3f64.exp(), max_relative = 1e-13);
        assert_relative_eq!(e[(1, 1)], (-2.0f64).exp(), max_relative = 1e-13);
        assert!(e[(2, 2)].abs() < 1e-300);
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn expm_rotation() {
        let t = 1.234;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], t.cos(), max_relative = 1e-12);
        assert_relative_eq!(e[(1, 0)], t.sin(), max_relative = 1e-12);
    }

    #[test]
    fn expm_nilpotent() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 1)], 3.0, max_relative = 1e-14);
        assert_relative_eq!(e[(0, 0)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn phi1_matches_series() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.4, 0.1, 0.0, -0.9]);
        let (_, phi) = expm_with_phi1(&a);
        // phi1(A) = sum A^k/(k+1)!
        let mut acc = DMatrix::<f64>::identity(2, 2);
        let mut term = DMatrix::<f64>::identity(2, 2);
        let mut fact = 1.0;
        for k in 1..30 {
            term *= &a;
            fact *= (k + 1) as f64;
            acc += &term / fact;
        }
        assert!((acc - phi).norm() < 1e-13);
    }

    #[test]
    fn phi1_stiff_limit() {
        // For a large negative eigenvalue, phi1(z) ~ -1/z.
        let a = DMatrix::from_row_slice(1, 1, &[-4000.0]);
        let (_, phi) = expm_with_phi1(&a);
        assert_relative_eq!(phi[(0, 0)], 1.0 / 4000.0, max_relative = 1e-10);
    }

    #[test]
    fn gauss_legendre_exactness() {
        // n-point rule integrates x^(2n-1) exactly.
        let (x, w) = gauss_legendre(8);
        for pow in 0..16 {
            let q: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * xi.powi(pow))
                .sum();
            let exact = if pow % 2 == 0 {
                2.0 / (pow as f64 + 1.0)
            } else {
                0.0
            };
            assert!(
                (q - exact).abs() < 1e-13,
                "pow {pow}: got {q}, want {exact}"
            );
        }
    }

    #[test]
    fn legendre_endpoint_values() {
        let p = legendre_all(6, 1.0);
        for v in &p {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-14);
        }
        let p = legendre_all(5, -1.0);
        for (k, v) in p.iter().enumerate() {
            let want = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_relative_eq!(*v, want, max_relative = 1e-14);
        }
    }
}
