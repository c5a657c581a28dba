//! Rank-adaptive augmented basis-update & Galerkin (BUG) integrator for large
//! matrix ODEs `u̇ = F(t, u)`, independent of transport specifics.
//!
//! One step: K and L basis updates in parallel subspaces, augmentation by QR,
//! a Galerkin update of the core matrix, then truncation back to a tolerance.
//! Each sub-integration is one IMEX Euler step: a diagonal-in-column stiff
//! term is taken implicitly, everything else explicitly.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::gram_defect;

/// Rank-factored state `u ≈ X S Vᵀ` with column-orthonormal `X` and `V`.
#[derive(Debug, Clone)]
pub struct LowRankState {
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRankState {
    /// Zero matrix represented at rank `r` (canonical orthonormal bases,
    /// zero coefficient matrix).
    pub fn zero(n_rows: usize, n_cols: usize, r: usize) -> Result<Self> {
        if r == 0 || r > n_rows.min(n_cols) {
            return Err(Error::Validation(format!(
                "rank {r} invalid for a {n_rows} x {n_cols} matrix"
            )));
        }
        let mut x = DMatrix::<f64>::zeros(n_rows, r);
        let mut v = DMatrix::<f64>::zeros(n_cols, r);
        for j in 0..r {
            x[(j, j)] = 1.0;
            v[(j, j)] = 1.0;
        }
        Ok(LowRankState {
            x,
            s: DMatrix::zeros(r, r),
            v,
        })
    }

    /// Validated constructor: bases must pass the 1e-10 Gram test.
    pub fn new(x: DMatrix<f64>, s: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != s.nrows() || v.ncols() != s.ncols() {
            return Err(Error::Validation("low-rank factor shapes disagree".into()));
        }
        let (dx, dv) = (gram_defect(&x), gram_defect(&v));
        if dx > 1e-10 || dv > 1e-10 {
            return Err(Error::Validation(format!(
                "basis not orthonormal: defects {dx:e}, {dv:e}"
            )));
        }
        Ok(LowRankState { x, s, v })
    }

    /// Truncated SVD of a dense matrix.
    pub fn from_dense(u: &DMatrix<f64>, r: usize) -> Result<Self> {
        let r = r.min(u.nrows()).min(u.ncols()).max(1);
        let svd = sorted_svd(u)?;
        Ok(LowRankState {
            x: svd.u.columns(0, r).into_owned(),
            s: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                r,
                svd.sigma.iter().take(r).cloned(),
            )),
            v: svd.v.columns(0, r).into_owned(),
        })
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.x * &self.s * self.v.transpose()
    }

    /// Stored element count: `r(n + m) + r^2`.
    pub fn element_count(&self) -> usize {
        self.x.len() + self.v.len() + self.s.len()
    }

    /// Gram defects `(‖XᵀX - I‖_F, ‖VᵀV - I‖_F)`.
    pub fn gram_defects(&self) -> (f64, f64) {
        (gram_defect(&self.x), gram_defect(&self.v))
    }
}

/// How the truncation tolerance is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    Absolute,
    /// Tolerance is `theta * ‖Ŝ‖_F` at every step.
    Relative,
}

/// Integrator configuration.
#[derive(Debug, Clone, Copy)]
pub struct BugConfig {
    pub theta: f64,
    pub theta_mode: ThetaMode,
    pub r_max: usize,
    pub r_initial: usize,
    /// Hyperbolic step-size factor used by drivers that own a CFL rule.
    pub cfl: f64,
}

impl Default for BugConfig {
    fn default() -> Self {
        BugConfig {
            theta: 1e-2,
            theta_mode: ThetaMode::Relative,
            r_max: 100,
            r_initial: 1,
            cfl: 0.7,
        }
    }
}

impl BugConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta < 0.0 {
            return Err(Error::Validation("theta must be >= 0".into()));
        }
        if self.r_initial == 0 || self.r_initial > self.r_max {
            return Err(Error::Validation(format!(
                "need 1 <= r_initial <= r_max, got {} and {}",
                self.r_initial, self.r_max
            )));
        }
        if !(self.cfl > 0.0) {
            return Err(Error::Validation("cfl factor must be positive".into()));
        }
        Ok(())
    }
}

/// Right-hand side split into an explicit part, evaluated through the K/L/S
/// factor products, and a stiff part of the form
/// `F_st(u) = -diag(row_weights) · u · diag(col_weights(t))`
/// that every sub-step treats implicitly.
pub trait ImexRhs: Sync {
    /// `F_ex(t, K V₀ᵀ) V₀`.
    fn explicit_k(&self, t: f64, k: &DMatrix<f64>, v0: &DMatrix<f64>) -> DMatrix<f64>;
    /// `F_ex(t, U₀ Lᵀ)ᵀ U₀`.
    fn explicit_l(&self, t: f64, l: &DMatrix<f64>, u0: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Ûᵀ F_ex(t, Û S V̂ᵀ) V̂`.
    fn explicit_s(
        &self,
        t: f64,
        s: &DMatrix<f64>,
        u_hat: &DMatrix<f64>,
        v_hat: &DMatrix<f64>,
    ) -> DMatrix<f64>;
    /// Per-row weights of the stiff term (e.g. cell densities); `None`
    /// disables the implicit part.
    fn stiff_row_weights(&self) -> Option<Vec<f64>>;
    /// Per-column damping rates of the stiff term at time `t` (all >= 0).
    fn stiff_col_weights(&self, t: f64) -> Option<Vec<f64>>;

    /// Dense explicit evaluation `F_ex(t, u)`; default goes through
    /// `explicit_k` with the identity co-basis.
    fn explicit_dense(&self, t: f64, u: &DMatrix<f64>) -> DMatrix<f64> {
        let eye = DMatrix::<f64>::identity(u.ncols(), u.ncols());
        self.explicit_k(t, u, &eye)
    }
}

/// One dense IMEX Euler step; the reference scheme the low-rank integrator is
/// tested against.
pub fn dense_imex_step(rhs: &dyn ImexRhs, t0: f64, dt: f64, u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut u1 = u + dt * rhs.explicit_dense(t0, u);
    if let (Some(wr), Some(wc)) = (rhs.stiff_row_weights(), rhs.stiff_col_weights(t0 + dt)) {
        for j in 0..u1.ncols() {
            for i in 0..u1.nrows() {
                u1[(i, j)] /= 1.0 + dt * wr[i] * wc[j];
            }
        }
    }
    u1
}

/// Diagnostics of a single BUG step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    pub rank: usize,
    /// Singular values of the augmented core, descending.
    pub singular_values: Vec<f64>,
    /// Frobenius norm of the discarded tail.
    pub truncation_error: f64,
    /// Set when the tolerance asked for more rank than `r_max` allows.
    pub rank_capped: bool,
    pub x_defect: f64,
    pub v_defect: f64,
}

struct SortedSvd {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v: DMatrix<f64>,
}

fn sorted_svd(m: &DMatrix<f64>) -> Result<SortedSvd> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Assembly("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Assembly("svd failed".into()))?;
    let sig: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let mut order: Vec<usize> = (0..sig.len()).collect();
    order.sort_by(|&a, &b| sig[b].partial_cmp(&sig[a]).unwrap());
    let k = sig.len();
    let mut us = DMatrix::<f64>::zeros(u.nrows(), k);
    let mut vs = DMatrix::<f64>::zeros(vt.ncols(), k);
    let mut ss = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &vt.row(src).transpose());
        ss.push(sig[src]);
    }
    Ok(SortedSvd {
        u: us,
        sigma: ss,
        v: vs,
    })
}

/// Truncates an augmented factorization `X̂ Ŝ V̂ᵀ`: the new rank is the
/// smallest `r₁` whose discarded singular-value tail satisfies
/// `(Σ_{j>r₁} σ_j²)^{1/2} <= θ`, floored at 1 and capped at `r_max`.
/// Returns the state, all singular values of `Ŝ`, the realized tail norm,
/// and whether the cap overrode the tolerance.
pub fn truncate(
    x_hat: &DMatrix<f64>,
    s_hat: &DMatrix<f64>,
    v_hat: &DMatrix<f64>,
    theta: f64,
    r_max: usize,
) -> Result<(LowRankState, Vec<f64>, f64, bool)> {
    let svd = sorted_svd(s_hat)?;
    let k = svd.sigma.len();
    // Suffix tail norms: tail[r] = sqrt(sum_{j >= r} sigma_j^2).
    let mut tail = vec![0.0f64; k + 1];
    for j in (0..k).rev() {
        tail[j] = tail[j + 1] + svd.sigma[j] * svd.sigma[j];
    }
    let tail: Vec<f64> = tail.iter().map(|t| t.sqrt()).collect();
    let mut r1 = k;
    for r in 0..=k {
        if tail[r] <= theta {
            r1 = r;
            break;
        }
    }
    let wanted = r1.max(1);
    let capped = wanted > r_max;
    let r1 = wanted.min(r_max).min(k).max(1);
    let x = x_hat * svd.u.columns(0, r1);
    let v = v_hat * svd.v.columns(0, r1);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        r1,
        svd.sigma.iter().take(r1).cloned(),
    ));
    Ok((LowRankState { x, s, v }, svd.sigma, tail[r1], capped))
}

fn thin_q(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Eigendecomposition of a symmetric PSD Gram matrix, eigenvalues clamped
/// at zero.
fn psd_eigen(g: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let sym = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    (eig.eigenvectors, d)
}

/// Solves `Y + dt·diag(w)·Y·G = B` with `G` symmetric PSD, exactly, via the
/// eigenbasis of `G`.
fn solve_rows_gram(b: DMatrix<f64>, dt: f64, w: &[f64], gram: DMatrix<f64>) -> DMatrix<f64> {
    let (q, d) = psd_eigen(gram);
    let mut y = b * &q;
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            y[(i, j)] /= 1.0 + dt * w[i] * d[j];
        }
    }
    y * q.transpose()
}

/// Solves `Y + dt·Gl·Y·Gr = B` with both Grams symmetric PSD.
fn solve_gram_gram(
    b: DMatrix<f64>,
    dt: f64,
    gram_left: DMatrix<f64>,
    gram_right: DMatrix<f64>,
) -> DMatrix<f64> {
    let (ql, dl) = psd_eigen(gram_left);
    let (qr, dr) = psd_eigen(gram_right);
    let mut y = ql.transpose() * b * &qr;
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            y[(i, j)] /= 1.0 + dt * dl[i] * dr[j];
        }
    }
    ql * y * qr.transpose()
}

fn weighted_gram(basis: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = basis.clone();
    for j in 0..scaled.ncols() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= w[i];
        }
    }
    basis.transpose() * scaled
}

/// One rank-adaptive augmented BUG step from `t0` to `t0 + dt`.
pub fn bug_step(
    state: &LowRankState,
    rhs: &dyn ImexRhs,
    t0: f64,
    dt: f64,
    config: &BugConfig,
) -> Result<(LowRankState, StepRecord)> {
    if !(dt > 0.0) {
        return Err(Error::Validation("step size must be positive".into()));
    }
    let t1 = t0 + dt;
    let stiff = match (rhs.stiff_row_weights(), rhs.stiff_col_weights(t1)) {
        (Some(wr), Some(wc)) => Some((wr, wc)),
        _ => None,
    };

    // K-step and L-step from the same initial data (parallel basis updates).
    let k0 = &state.x * &state.s;
    let fk = rhs.explicit_k(t0, &k0, &state.v);
    let k1 = {
        let b = &k0 + dt * fk;
        match &stiff {
            Some((wr, wc)) => {
                let gram = weighted_gram(&state.v, wc);
                solve_rows_gram(b, dt, wr, gram)
            }
            None => b,
        }
    };

    let l0 = &state.v * state.s.transpose();
    let fl = rhs.explicit_l(t0, &l0, &state.x);
    let l1 = {
        let b = &l0 + dt * fl;
        match &stiff {
            Some((wr, wc)) => {
                let gram = weighted_gram(&state.x, wr);
                solve_rows_gram(b, dt, wc, gram)
            }
            None => b,
        }
    };

    // Augmentation: spans of [K¹, X₀] and [L¹, V₀].
    let r = state.rank();
    let n = state.x.nrows();
    let m = state.v.nrows();
    let mut xa = DMatrix::<f64>::zeros(n, 2 * r);
    xa.view_mut((0, 0), (n, r)).copy_from(&k1);
    xa.view_mut((0, r), (n, r)).copy_from(&state.x);
    let x_hat = thin_q(xa);
    let mut va = DMatrix::<f64>::zeros(m, 2 * r);
    va.view_mut((0, 0), (m, r)).copy_from(&l1);
    va.view_mut((0, r), (m, r)).copy_from(&state.v);
    let v_hat = thin_q(va);

    // Galerkin update of the augmented core.
    let s0_hat = (x_hat.transpose() * &state.x) * &state.s * (state.v.transpose() * &v_hat);
    let fs = rhs.explicit_s(t0, &s0_hat, &x_hat, &v_hat);
    let s1_hat = {
        let b = &s0_hat + dt * fs;
        match &stiff {
            Some((wr, wc)) => {
                let gl = weighted_gram(&x_hat, wr);
                let gr = weighted_gram(&v_hat, wc);
                solve_gram_gram(b, dt, gl, gr)
            }
            None => b,
        }
    };

    if s1_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepFailure {
            step: 0,
            msg: format!("non-finite core matrix at t = {t1}"),
        });
    }

    let theta_eff = match config.theta_mode {
        ThetaMode::Absolute => config.theta,
        ThetaMode::Relative => config.theta * s1_hat.norm(),
    };
    let (new_state, sigma, tail, capped) =
        truncate(&x_hat, &s1_hat, &v_hat, theta_eff, config.r_max)?;
    let (x_defect, v_defect) = new_state.gram_defects();
    let record = StepRecord {
        t: t1,
        rank: new_state.rank(),
        singular_values: sigma,
        truncation_error: tail,
        rank_capped: capped,
        x_defect,
        v_defect,
    };
    Ok((new_state, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct ZeroRhs;
    impl ImexRhs for ZeroRhs {
        fn explicit_k(&self, _t: f64, k: &DMatrix<f64>, _v0: &DMatrix<f64>) -> DMatrix<f64> {
            DMatrix::zeros(k.nrows(), k.ncols())
        }
        fn explicit_l(&self, _t: f64, l: &DMatrix<f64>, _u0: &DMatrix<f64>) -> DMatrix<f64> {
            DMatrix::zeros(l.nrows(), l.ncols())
        }
        fn explicit_s(
            &self,
            _t: f64,
            s: &DMatrix<f64>,
            _u: &DMatrix<f64>,
            _v: &DMatrix<f64>,
        ) -> DMatrix<f64> {
            DMatrix::zeros(s.nrows(), s.ncols())
        }
        fn stiff_row_weights(&self) -> Option<Vec<f64>> {
            None
        }
        fn stiff_col_weights(&self, _t: f64) -> Option<Vec<f64>> {
            None
        }
    }

    /// Linear RHS `F(u) = A u + u B` routed through the explicit part, plus an
    /// optional stiff column damping.
    struct LinearRhs {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        stiff_cols: Option<Vec<f64>>,
    }
    impl ImexRhs for LinearRhs {
        fn explicit_k(&self, _t: f64, k: &DMatrix<f64>, v0: &DMatrix<f64>) -> DMatrix<f64> {
            // (A K V0ᵀ + K V0ᵀ B) V0
            &self.a * k + k * (v0.transpose() * &self.b * v0)
        }
        fn explicit_l(&self, _t: f64, l: &DMatrix<f64>, u0: &DMatrix<f64>) -> DMatrix<f64> {
            // (A U0 Lᵀ + U0 Lᵀ B)ᵀ U0
            l * (u0.transpose() * &self.a * u0) + self.b.transpose() * l
        }
        fn explicit_s(
            &self,
            _t: f64,
            s: &DMatrix<f64>,
            u: &DMatrix<f64>,
            v: &DMatrix<f64>,
        ) -> DMatrix<f64> {
            (u.transpose() * &self.a * u) * s + s * (v.transpose() * &self.b * v)
        }
        fn stiff_row_weights(&self) -> Option<Vec<f64>> {
            self.stiff_cols.as_ref().map(|_| vec![1.0; self.a.nrows()])
        }
        fn stiff_col_weights(&self, _t: f64) -> Option<Vec<f64>> {
            self.stiff_cols.clone()
        }
    }

    fn random_state(n: usize, m: usize, r: usize, seed: u64) -> LowRankState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, r, |_, _| rng.gen::<f64>() - 0.5);
        let v = DMatrix::from_fn(m, r, |_, _| rng.gen::<f64>() - 0.5);
        let s = DMatrix::from_fn(r, r, |_, _| rng.gen::<f64>() - 0.5);
        LowRankState {
            x: x.qr().q(),
            s,
            v: v.qr().q(),
        }
    }

    fn default_cfg(theta: f64, r_max: usize) -> BugConfig {
        BugConfig {
            theta,
            theta_mode: ThetaMode::Absolute,
            r_max,
            r_initial: 1,
            cfl: 0.7,
        }
    }

    #[test]
    fn zero_dynamics_preserve_the_matrix() {
        let state = random_state(12, 7, 3, 7);
        let before = state.to_dense();
        let (after, rec) = bug_step(&state, &ZeroRhs, 0.0, 0.1, &default_cfg(0.0, 20)).unwrap();
        assert!(
            (after.to_dense() - before).norm() <= 1e-10,
            "zero dynamics must reproduce the matrix"
        );
        assert!(rec.x_defect <= 1e-10 && rec.v_defect <= 1e-10);
    }

    #[test]
    fn pure_moment_damping_matches_dense_step() {
        // F(u) = u D routed explicitly; dynamics stay in span(V̂).
        let n = 10;
        let m = 6;
        let mut d = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            d[(j, j)] = -0.5 * j as f64;
        }
        let rhs = LinearRhs {
            a: DMatrix::zeros(n, n),
            b: d,
            stiff_cols: None,
        };
        let state = random_state(n, m, 3, 3);
        let dt = 0.05;
        let (after, _) = bug_step(&state, &rhs, 0.0, dt, &default_cfg(0.0, 12)).unwrap();
        let dense = dense_imex_step(&rhs, 0.0, dt, &state.to_dense());
        assert!(
            (after.to_dense() - dense).norm() <= 1e-11,
            "damping step must match the dense IMEX-Euler solution"
        );
    }

    #[test]
    fn sylvester_rhs_reproduces_dense_trajectory_when_rank_suffices() {
        // F(u) = A u + u B keeps the rank of the IMEX iteration bounded by
        // construction of the augmentation; theta = 0 must then reproduce the
        // dense trajectory step by step.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 14;
        let m = 9;
        let a = DMatrix::from_fn(n, n, |_, _| 0.2 * (rng.gen::<f64>() - 0.5));
        let b = DMatrix::from_fn(m, m, |_, _| 0.2 * (rng.gen::<f64>() - 0.5));
        let rhs = LinearRhs {
            a,
            b,
            stiff_cols: None,
        };
        let mut state = random_state(n, m, 2, 5);
        let mut dense = state.to_dense();
        let dt = 0.02;
        let cfg = default_cfg(0.0, n.min(m));
        for step in 0..20 {
            let (next, rec) = bug_step(&state, &rhs, step as f64 * dt, dt, &cfg).unwrap();
            dense = dense_imex_step(&rhs, step as f64 * dt, dt, &dense);
            let err = (next.to_dense() - &dense).norm();
            assert!(
                err <= 1e-9 * dense.norm().max(1.0),
                "step {step}: low-rank vs dense IMEX error {err:e}"
            );
            assert!(rec.x_defect <= 1e-10 && rec.v_defect <= 1e-10);
            state = next;
        }
    }

    #[test]
    fn first_order_in_time_against_closed_form() {
        // Mixed stiff/non-stiff linear ODE with known solution
        // u(t) = exp(At) u0 exp((B - Λ)t).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 16;
        let m = 10;
        let a0 = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let a = (&a0 + a0.transpose()) * 0.25;
        let mut b = DMatrix::<f64>::zeros(m, m);
        let mut lam = vec![0.0; m];
        for j in 0..m {
            b[(j, j)] = 0.3 * (rng.gen::<f64>() - 0.5);
            lam[j] = 3.0 * rng.gen::<f64>();
        }
        let rhs = LinearRhs {
            a: a.clone(),
            b: b.clone(),
            stiff_cols: Some(lam.clone()),
        };
        let u0 = random_state(n, m, 2, 9);
        let t_end = 0.5;
        let mut right = b.clone();
        for j in 0..m {
            right[(j, j)] -= lam[j];
        }
        let exact = expm(&(&a * t_end)) * u0.to_dense() * expm(&(&right * t_end));

        let mut errs = Vec::new();
        for &steps in &[10usize, 20, 40, 80, 160] {
            let dt = t_end / steps as f64;
            let mut state = u0.clone();
            let cfg = default_cfg(0.0, n.min(m));
            for k in 0..steps {
                let (next, _) = bug_step(&state, &rhs, k as f64 * dt, dt, &cfg).unwrap();
                state = next;
            }
            errs.push((state.to_dense() - &exact).norm());
        }
        // Slope over the decade.
        let order = (errs[0] / errs[4]).log2() / 4.0;
        assert!(
            (0.8..=1.2).contains(&order),
            "measured order {order} outside [0.8, 1.2]; errors {errs:?}"
        );
    }

    #[test]
    fn step_acceptance_independent_of_tiny_singular_values() {
        // Inject sigma_min = 1e-14 and march 50 steps of a contractive
        // problem; nothing may blow up and bases stay orthonormal.
        let n = 20;
        let m = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a0 = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let a = (&a0 + a0.transpose()) * 0.1 - DMatrix::identity(n, n) * 0.2;
        let rhs = LinearRhs {
            a,
            b: DMatrix::zeros(m, m),
            stiff_cols: Some((0..m).map(|j| j as f64).collect()),
        };
        let mut state = random_state(n, m, 3, 17);
        state.s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-7, 1e-14]));
        let bound = 10.0 * state.to_dense().norm().max(1.0);
        let cfg = default_cfg(1e-12, 6);
        for k in 0..50 {
            let (next, rec) = bug_step(&state, &rhs, k as f64 * 0.05, 0.05, &cfg).unwrap();
            assert!(next.to_dense().norm() <= bound, "blow-up at step {k}");
            assert!(rec.x_defect <= 1e-10 && rec.v_defect <= 1e-10);
            state = next;
        }
    }

    #[test]
    fn truncate_examples() {
        let sig = [3.0, 2.0, 1e-8, 1e-9];
        let x = DMatrix::<f64>::identity(8, 4);
        let v = DMatrix::<f64>::identity(6, 4);
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sig.to_vec()));
        let (state, _, tail, capped) = truncate(&x, &s, &v, 1e-6, 10).unwrap();
        assert_eq!(state.rank(), 2);
        assert!(!capped);
        let want = (1e-16f64 + 1e-18).sqrt();
        assert!((tail - want).abs() <= 1e-12 * want);

        // theta = 0 keeps every nonzero singular value.
        let (state, _, tail, _) = truncate(&x, &s, &v, 0.0, 10).unwrap();
        assert_eq!(state.rank(), 4);
        assert_eq!(tail, 0.0);

        // Rank floor at 1 even for huge tolerances.
        let s1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0]));
        let x1 = DMatrix::<f64>::identity(8, 1);
        let v1 = DMatrix::<f64>::identity(6, 1);
        let (state, _, _, _) = truncate(&x1, &s1, &v1, 10.0, 10).unwrap();
        assert_eq!(state.rank(), 1);
    }

    #[test]
    fn truncate_tail_bound_and_minimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let r2 = 2 * rng.gen_range(1..=6usize);
            let s_hat = DMatrix::from_fn(r2, r2, |_, _| rng.gen::<f64>() - 0.5);
            let x = DMatrix::<f64>::identity(r2 + 3, r2);
            let v = DMatrix::<f64>::identity(r2 + 5, r2);
            let theta = 10f64.powf(rng.gen_range(-8.0..0.0));
            let (state, sigma, tail, _) = truncate(&x, &s_hat, &v, theta, 100).unwrap();
            let r1 = state.rank();
            assert!(tail <= theta + 1e-15, "tail bound violated");
            // Minimality: r1 - 1 must violate the bound (modulo the floor).
            if r1 > 1 {
                let worse: f64 = sigma[r1 - 1..].iter().map(|s| s * s).sum::<f64>().sqrt();
                assert!(
                    worse > theta,
                    "rank {r1} not minimal: tail at {} would be {worse} <= {theta}",
                    r1 - 1
                );
            }
        }
    }

    #[test]
    fn element_count_formula() {
        let state = random_state(50, 20, 4, 1);
        assert_eq!(state.element_count(), 4 * (50 + 20) + 16);
    }
}
