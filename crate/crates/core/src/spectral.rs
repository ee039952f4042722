//! Fourier-Galerkin oracle for `-h^2 Lap psi = lambda (u + v) psi` on the
//! 2-torus, the 1-D Larmor operator, spectrum matching and gap statistics.
//!
//! In the basis `e^{i(k1 x1 + k2 x2)}`, `|k_i| <= M`, the pencil splits as a
//! Kronecker sum `A - lambda B = L1(lambda) (+) L2(lambda)` with
//! `Li(lambda) = h^2 k^2 - lambda W_i` and `W_1`, `W_2` the Toeplitz
//! matrices of `u` and `v`. Every generalized eigenvalue is a root of
//! `mu_i(lambda) + nu_j(lambda)` for sorted eigenvalue branches of `L1`,
//! `L2`; this sum has derivative `-<(u+v) psi, psi> < 0`, so each pair
//! `(i, j)` contributes at most one root and brackets come from the window
//! endpoints alone.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::Liouville;
use crate::trig::TrigSeries;

/// Largest pencil dimension accepted by the dense solver.
pub const DENSE_MAX_DIM: usize = 4000;
/// Required relative residual `|A psi - lambda B psi| / |B psi|`.
pub const RESIDUAL_BOUND: f64 = 1e-8;
/// Relative tolerance for counting eigenvalues as one cluster.
pub const CLUSTER_TOL: f64 = 1e-10;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn cluster_tol(x: f64) -> f64 {
    CLUSTER_TOL * x.abs().max(1.0)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
struct HermitianEigen {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<Complex64>,
}

/// Dense Hermitian eigensolve through `faer`; `nalgebra`'s QR iteration
/// stalls at residuals near `1e-7` on some pencils of a few hundred rows.
/// Falls back to `nalgebra` only if `faer` reports no convergence.
fn hermitian_eigen(m: &DMatrix<Complex64>) -> HermitianEigen {
    let n = m.nrows();
    let fm = faer::Mat::<Complex64>::from_fn(n, n, |r, c| m[(r, c)]);
    match fm.self_adjoint_eigen(faer::Side::Lower) {
        Ok(e) => {
            let u = e.U();
            let s: Vec<f64> = e.S().column_vector().iter().map(|z| z.re).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| s[*a].total_cmp(&s[*b]));
            HermitianEigen {
                eigenvalues: order.iter().map(|&k| s[k]).collect(),
                eigenvectors: DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]),
            }
        }
        Err(_) => {
            let e = m.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| e.eigenvalues[*a].total_cmp(&e.eigenvalues[*b]));
            HermitianEigen {
                eigenvalues: order.iter().map(|&k| e.eigenvalues[k]).collect(),
                eigenvectors: DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, order[c])]),
            }
        }
    }
}

/// `L(lambda) = diag(h^2 k^2) - lambda W` on `|k| <= m`, with `W` the
/// Toeplitz matrix of a real trigonometric polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Pencil1d {
    h: f64,
    m: usize,
    /// `w_hat(0..=d)`; negative indices follow by conjugation.
    w: Vec<Complex64>,
}

impl Pencil1d {
    pub fn new(h: f64, m: usize, weight: &TrigSeries) -> Self {
        let w = (0..=weight.degree() as i64).map(|n| weight.fourier(n)).collect();
        Pencil1d { h, m, w }
    }

    pub fn dim(&self) -> usize {
        2 * self.m + 1
    }

    pub fn wavenumber(&self, idx: usize) -> i64 {
        idx as i64 - self.m as i64
    }

    fn coeff(&self, n: i64) -> Complex64 {
        let a = n.unsigned_abs() as usize;
        match self.w.get(a) {
            Some(c) if n >= 0 => *c,
            Some(c) => c.conj(),
            None => czero(),
        }
    }

    fn bandwidth(&self) -> usize {
        self.w.len() - 1
    }

    fn stiffness(&self, idx: usize) -> f64 {
        let k = self.wavenumber(idx) as f64;
        self.h * self.h * k * k
    }

    fn entry(&self, lambda: f64, a: usize, b: usize) -> Complex64 {
        let mut e = -lambda * self.coeff(self.wavenumber(a) - self.wavenumber(b));
        if a == b {
            e += self.stiffness(a);
        }
        e
    }

    fn dense(&self, lambda: f64) -> DMatrix<Complex64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| self.entry(lambda, a, b))
    }

    /// Toeplitz matrix of the weight.
    pub fn weight_matrix(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| self.coeff(self.wavenumber(a) - self.wavenumber(b)))
    }

    /// Real symmetric tridiagonal form `(diag, |offdiag|)`, unitarily similar
    /// to `L(lambda)` when the weight has degree at most one.
    fn tridiagonal(&self, lambda: f64) -> Option<(Vec<f64>, f64)> {
        if self.bandwidth() > 1 {
            return None;
        }
        let c0 = self.w[0].re;
        let diag = (0..self.dim()).map(|i| self.stiffness(i) - lambda * c0).collect();
        let off = self.w.get(1).map_or(0.0, |c| lambda.abs() * c.norm());
        Some((diag, off))
    }

    /// Phases `theta` with `L = D T D^*`, `D = diag(e^{i theta})`.
    fn phases(&self, lambda: f64) -> Vec<Complex64> {
        let sub = self.w.get(1).map_or(czero(), |c| -lambda * c);
        let step = if sub.norm() > 0.0 {
            sub / sub.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut out = Vec::with_capacity(self.dim());
        let mut cur = Complex64::new(1.0, 0.0);
        for _ in 0..self.dim() {
            out.push(cur);
            cur *= step;
        }
        out
    }

    /// `i`-th smallest eigenvalue (0-based) of `L(lambda)`.
    pub fn eigenvalue(&self, lambda: f64, i: usize) -> f64 {
        match self.tridiagonal(lambda) {
            Some((d, off)) => tridiag_eigenvalue(&d, off, i),
            None => {
                let radius: f64 = (1..self.w.len()).map(|n| 2.0 * lambda.abs() * self.w[n].norm()).sum();
                let c0 = lambda * self.w[0].re;
                let lo = self.stiffness(self.m) - c0 - radius;
                let hi = self.stiffness(0) - c0 + radius;
                bisect_eigenvalue(|sigma| self.band_count(lambda, sigma), lo, hi, i)
            }
        }
    }

    /// Number of eigenvalues of `L(lambda)` below `sigma`: inertia of the
    /// banded `L D L^*` factorisation of `L(lambda) - sigma`.
    fn band_count(&self, lambda: f64, sigma: f64) -> usize {
        let n = self.dim();
        let bw = self.bandwidth();
        let scale = self.stiffness(0) + lambda.abs() * self.w.iter().map(|c| c.norm()).sum::<f64>() + sigma.abs();
        let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        // l[j][r] = L[j, j - 1 - r]
        let mut l = vec![vec![czero(); bw]; n];
        let mut d = vec![0.0; n];
        let mut count = 0;
        for j in 0..n {
            let mut dj = self.entry(lambda, j, j).re - sigma;
            for r in 0..bw.min(j) {
                dj -= l[j][r].norm_sqr() * d[j - 1 - r];
            }
            if dj == 0.0 {
                dj = -tiny;
            }
            if dj < 0.0 {
                count += 1;
            }
            d[j] = dj;
            for i in j + 1..(j + bw + 1).min(n) {
                let mut a = self.entry(lambda, i, j);
                for k in i.saturating_sub(bw)..j {
                    a -= l[i][i - 1 - k] * l[j][j - 1 - k].conj() * d[k];
                }
                l[i][i - 1 - j] = a / dj;
            }
        }
        count
    }

    /// All eigenvalues of `L(lambda)`, ascending.
    pub fn eigenvalues(&self, lambda: f64) -> Vec<f64> {
        match self.tridiagonal(lambda) {
            Some((d, off)) => (0..d.len()).map(|i| tridiag_eigenvalue(&d, off, i)).collect(),
            None => hermitian_eigen(&self.dense(lambda)).eigenvalues,
        }
    }

    /// Orthonormal eigenvectors for consecutive eigenvalue indices `idx`
    /// with eigenvalues `mus`.
    fn eigenvectors(&self, lambda: f64, idx: &[usize], mus: &[f64]) -> Vec<Vec<Complex64>> {
        match self.tridiagonal(lambda) {
            Some((d, off)) => {
                let ph = self.phases(lambda);
                let mut real: Vec<Vec<f64>> = Vec::new();
                for (slot, &mu) in mus.iter().enumerate() {
                    let v = tridiag_eigenvector(&d, off, mu, &real, idx[slot]);
                    real.push(v);
                }
                real.iter()
                    .map(|x| x.iter().zip(&ph).map(|(a, p)| p * *a).collect())
                    .collect()
            }
            None => {
                let eig = hermitian_eigen(&self.dense(lambda));
                idx.iter()
                    .map(|&i| eig.eigenvectors.column(i).iter().cloned().collect())
                    .collect()
            }
        }
    }

    fn apply(&self, lambda: f64, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        let bw = self.bandwidth();
        (0..n)
            .map(|a| {
                let lo = a.saturating_sub(bw);
                let hi = (a + bw).min(n - 1);
                (lo..=hi).map(|b| self.entry(lambda, a, b) * x[b]).sum()
            })
            .collect()
    }

    fn apply_weight(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        let bw = self.bandwidth();
        (0..n)
            .map(|a| {
                let lo = a.saturating_sub(bw);
                let hi = (a + bw).min(n - 1);
                (lo..=hi)
                    .map(|b| self.coeff(self.wavenumber(a) - self.wavenumber(b)) * x[b])
                    .sum()
            })
            .collect()
    }
}

/// Number of eigenvalues below `sigma` of the symmetric tridiagonal matrix
/// with diagonal `d` and constant off-diagonal `off`.
fn sturm_count(d: &[f64], off: f64, sigma: f64) -> usize {
    let off2 = off * off;
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = 1.0;
    for (i, &di) in d.iter().enumerate() {
        q = di - sigma - if i == 0 { 0.0 } else { off2 / q };
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiag_eigenvalue(d: &[f64], off: f64, i: usize) -> f64 {
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * off;
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 * off;
    bisect_eigenvalue(|sigma| sturm_count(d, off, sigma), lo, hi, i)
}

/// `i`-th eigenvalue from a counting function, given a bracket of the
/// whole spectrum.
fn bisect_eigenvalue<C: Fn(f64) -> usize>(count: C, lo0: f64, hi0: f64, i: usize) -> f64 {
    let scale = lo0.abs().max(hi0.abs()).max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (lo0 - 1e-12 * scale, hi0 + 1e-12 * scale);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if count(mid) > i {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `(T - shift) x = b` in place by Gaussian elimination with partial
/// pivoting; exact zero pivots are replaced by `tiny`.
fn tridiag_solve(d: &[f64], off: f64, shift: f64, b: &mut [f64], tiny: f64) {
    let n = d.len();
    let mut dg: Vec<f64> = d.iter().map(|x| x - shift).collect();
    let mut du = vec![off; n.saturating_sub(1)];
    let mut dl = vec![off; n.saturating_sub(1)];
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    for i in 0..n.saturating_sub(1) {
        if dg[i].abs() >= dl[i].abs() {
            if dg[i] == 0.0 {
                dg[i] = tiny;
            }
            let f = dl[i] / dg[i];
            dg[i + 1] -= f * du[i];
            b[i + 1] -= f * b[i];
        } else {
            let f = dg[i] / dl[i];
            dg[i] = dl[i];
            let t = dg[i + 1];
            dg[i + 1] = du[i] - f * t;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] *= -f;
            }
            du[i] = t;
            let t = b[i];
            b[i] = b[i + 1];
            b[i + 1] = t - f * b[i + 1];
        }
        dl[i] = 0.0;
    }
    if dg[n - 1] == 0.0 {
        dg[n - 1] = tiny;
    }
    b[n - 1] /= dg[n - 1];
    if n > 1 {
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / dg[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / dg[i];
    }
}

/// Inverse iteration for the eigenvalue `mu`, orthogonal to `prior`.
fn tridiag_eigenvector(d: &[f64], off: f64, mu: f64, prior: &[Vec<f64>], seed: usize) -> Vec<f64> {
    let n = d.len();
    let norm = d.iter().map(|x| x.abs()).fold(0.0, f64::max) + 2.0 * off;
    let tiny = f64::EPSILON * norm.max(f64::MIN_POSITIVE);
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i * 7 + seed * 13) as f64 * 0.618_033_988_75).sin())
        .collect();
    let orthonormalize = |x: &mut Vec<f64>| {
        for p in prior {
            let dot: f64 = x.iter().zip(p).map(|(a, b)| a * b).sum();
            for (a, b) in x.iter_mut().zip(p) {
                *a -= dot * b;
            }
        }
        let s = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        x.iter_mut().for_each(|a| *a /= s);
    };
    orthonormalize(&mut x);
    for _ in 0..4 {
        tridiag_solve(d, off, mu, &mut x, tiny);
        orthonormalize(&mut x);
    }
    x
}

/// Discretised pencil `A psi = lambda B psi` for a Liouville weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinProblem {
    pub h: f64,
    pub m: usize,
    pub axis1: Pencil1d,
    pub axis2: Pencil1d,
    /// Smallest eigenvalue of `B`.
    pub mass_min_eig: f64,
}

pub fn assemble(model: &Liouville, h: f64, m: usize) -> Result<GalerkinProblem> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid("h", "must be positive"));
    }
    let need = model.u.degree() + model.v.degree() + 8;
    if m < need {
        return Err(invalid("m", format!("{m} below degree bound {need}")));
    }
    let axis1 = Pencil1d::new(h, m, &model.u);
    let axis2 = Pencil1d::new(h, m, &model.v);
    // eigenvalues of a Kronecker sum add; L(-1) = A + W
    let wmin = |p: &Pencil1d| Pencil1d { h: 0.0, ..p.clone() }.eigenvalue(-1.0, 0);
    let mass_min_eig = wmin(&axis1) + wmin(&axis2);
    if !(mass_min_eig > 0.0) {
        return Err(Error::NotPositive { min_eig: mass_min_eig });
    }
    Ok(GalerkinProblem {
        h,
        m,
        axis1,
        axis2,
        mass_min_eig,
    })
}

/// Smallest `M` resolving eigenvalues up to `lambda_max` with a margin.
pub fn default_cutoff(model: &Liouville, h: f64, lambda_max: f64) -> usize {
    let wmax = model
        .weight_field()
        .grid_max()
        .max(model.u.grid_max() + model.v.grid_max());
    let base = 1.2 * (lambda_max.abs() * wmax).sqrt() / h + 16.0;
    (base.ceil() as usize).max(model.u.degree() + model.v.degree() + 8)
}

/// Weyl estimate of the number of eigenvalues below `lambda`.
pub fn weyl_count(model: &Liouville, h: f64, lambda: f64) -> f64 {
    let mean = model.u.fourier(0).re + model.v.fourier(0).re;
    std::f64::consts::PI * lambda * mean / (h * h)
}

impl GalerkinProblem {
    pub fn dim(&self) -> usize {
        self.axis1.dim() * self.axis2.dim()
    }

    /// `B[k, l]`, indices `k = (k1, k2)` with `|k_i| <= M`.
    pub fn mass_entry(&self, k: [i64; 2], l: [i64; 2]) -> Complex64 {
        let mut e = czero();
        if k[1] == l[1] {
            e += self.axis1.coeff(k[0] - l[0]);
        }
        if k[0] == l[0] {
            e += self.axis2.coeff(k[1] - l[1]);
        }
        e
    }

    pub fn stiffness_entry(&self, k: [i64; 2]) -> f64 {
        self.h * self.h * (k[0] * k[0] + k[1] * k[1]) as f64
    }

    /// Number of eigenvalues strictly below `lambda` (Sylvester inertia of
    /// `A - lambda B`, valid since `B > 0`).
    pub fn count_below(&self, lambda: f64) -> usize {
        let mu = self.axis1.eigenvalues(lambda);
        let nu = self.axis2.eigenvalues(lambda);
        mu.iter().map(|m| nu.partition_point(|v| *v < -m)).sum()
    }

    fn index(&self, flat: usize) -> [i64; 2] {
        let n1 = self.axis1.dim();
        [self.axis1.wavenumber(flat % n1), self.axis2.wavenumber(flat / n1)]
    }

    fn dense_pair(&self) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let n = self.dim();
        let a = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::new(self.stiffness_entry(self.index(r)), 0.0)
            } else {
                czero()
            }
        });
        let b = DMatrix::from_fn(n, n, |r, c| self.mass_entry(self.index(r), self.index(c)));
        (a, b)
    }

    /// `A x` and `B x` for `x` laid out as `k1 + n1 k2`.
    fn apply_ab(&self, x: &DMatrix<Complex64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let (n1, n2) = (self.axis1.dim(), self.axis2.dim());
        let mut a = x.clone();
        for c in 0..n2 {
            for r in 0..n1 {
                a[(r, c)] *= self.axis1.stiffness(r) + self.axis2.stiffness(c);
            }
        }
        let w1 = self.axis1.weight_matrix();
        let w2 = self.axis2.weight_matrix();
        let b = &w1 * x + x * w2.transpose();
        (a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Kronecker-sum root finding on the 1-D branches.
    Separable,
    /// Cholesky reduction and full Hermitian eigensolve.
    Dense,
    /// Shift-invert subspace iteration around the window centre.
    ShiftInvert,
}

/// Product eigenvector `x (x) y` from the separable solver, with `x`, `y` in
/// a momentum-diagonal basis of their 1-D clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    pub branch: [usize; 2],
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    /// Branches of the time-reversed state.
    pub reversed_branch: [usize; 2],
    /// `|<reversed state, image>|`.
    pub reversal_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumWindow {
    pub h: f64,
    pub m: usize,
    pub center: f64,
    pub half_width: f64,
    pub solver: Solver,
    /// Ascending, with multiplicity.
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    #[serde(skip)]
    pub states: Option<Vec<ProductState>>,
}

impl SpectrumWindow {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `(gap_prev, gap_next)` per eigenvalue; `None` at the window edges.
    pub fn gaps(&self) -> Vec<(Option<f64>, Option<f64>)> {
        let e = &self.eigenvalues;
        (0..e.len())
            .map(|j| {
                let prev = (j > 0).then(|| e[j] - e[j - 1]);
                let next = (j + 1 < e.len()).then(|| e[j + 1] - e[j]);
                (prev, next)
            })
            .collect()
    }

    /// Cluster sizes under the relative tolerance `CLUSTER_TOL`.
    pub fn multiplicities(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &e in &self.eigenvalues {
            match out.last_mut() {
                Some((v, n)) if (e - *v).abs() <= cluster_tol(e) => *n += 1,
                _ => out.push((e, 1)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOptions {
    pub solver: Solver,
    /// Retain product eigenvectors (separable solver only).
    pub keep_vectors: bool,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            solver: Solver::Separable,
            keep_vectors: false,
        }
    }
}

/// All eigenvalues in `[center - half_width, center + half_width]`.
pub fn solve_window(problem: &GalerkinProblem, center: f64, half_width: f64) -> Result<SpectrumWindow> {
    solve_window_with(problem, center, half_width, WindowOptions::default())
}

pub fn solve_window_with(
    problem: &GalerkinProblem,
    center: f64,
    half_width: f64,
    opts: WindowOptions,
) -> Result<SpectrumWindow> {
    if !(half_width >= 0.0) || !center.is_finite() {
        return Err(invalid("window", "need finite centre and nonnegative half width"));
    }
    let (lo, hi) = (center - half_width, center + half_width);
    let (eigenvalues, residuals, states) = match opts.solver {
        Solver::Separable => {
            let (e, r, s) = separable_window(problem, lo, hi)?;
            (e, r, opts.keep_vectors.then_some(s))
        }
        Solver::Dense => {
            let (e, r) = dense_window(problem, lo, hi)?;
            (e, r, None)
        }
        Solver::ShiftInvert => {
            let (e, r) = shift_invert_window(problem, lo, hi)?;
            (e, r, None)
        }
    };
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    if max_residual > RESIDUAL_BOUND {
        return Err(Error::NotConverged(format!(
            "eigenpair residual {max_residual:e} exceeds {RESIDUAL_BOUND:e}"
        )));
    }
    Ok(SpectrumWindow {
        h: problem.h,
        m: problem.m,
        center,
        half_width,
        solver: opts.solver,
        eigenvalues,
        residuals,
        max_residual,
        states,
    })
}

/// Consecutive runs of `values` (ascending) closer than the cluster
/// tolerance; returns `(start, len)` of the run containing `i`.
fn cluster_of(values: &[f64], i: usize) -> (usize, usize) {
    let mut s = i;
    while s > 0 && (values[s] - values[s - 1]).abs() <= cluster_tol(values[s]) {
        s -= 1;
    }
    let mut e = i;
    while e + 1 < values.len() && (values[e + 1] - values[e]).abs() <= cluster_tol(values[e]) {
        e += 1;
    }
    (s, e - s + 1)
}

/// Eigenvectors of branch `i` of `p` at `lambda`, rotated within its
/// cluster to diagonalise the momentum `hD`; returns the vector for `i`,
/// the branch of its time-reversed partner and the overlap.
fn chiral_vector(p: &Pencil1d, lambda: f64, i: usize) -> (Vec<Complex64>, usize, f64) {
    let n = p.dim();
    // cluster detection needs neighbouring branches only
    let lo = i.saturating_sub(4);
    let hi = (i + 4).min(n - 1);
    let local: Vec<f64> = (lo..=hi).map(|j| p.eigenvalue(lambda, j)).collect();
    let (s, len) = cluster_of(&local, i - lo);
    let idx: Vec<usize> = (s..s + len).map(|j| j + lo).collect();
    let mus: Vec<f64> = idx.iter().map(|&j| local[j - lo]).collect();
    let vecs = p.eigenvectors(lambda, &idx, &mus);
    let slot = i - idx[0];
    if len == 1 {
        let v = &vecs[0];
        let ov = reversal_overlap(p, v, v).norm();
        return (vecs[0].clone(), i, ov);
    }
    let mom = DMatrix::from_fn(len, len, |a, b| {
        (0..n)
            .map(|k| vecs[a][k].conj() * vecs[b][k] * p.wavenumber(k) as f64)
            .sum::<Complex64>()
    });
    let eig = hermitian_eigen(&mom);
    let rotated: Vec<Vec<Complex64>> = (0..len)
        .map(|c| {
            (0..n)
                .map(|k| (0..len).map(|a| vecs[a][k] * eig.eigenvectors[(a, c)]).sum())
                .collect()
        })
        .collect();
    let (partner, ov) = (0..len)
        .map(|b| (b, reversal_overlap(p, &rotated[slot], &rotated[b]).norm()))
        .fold((slot, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    (rotated[slot].clone(), idx[0] + partner, ov)
}

/// `<y, Gamma x>` with `(Gamma x)_k = conj(x_{-k})`.
fn reversal_overlap(p: &Pencil1d, x: &[Complex64], y: &[Complex64]) -> Complex64 {
    let n = p.dim();
    (0..n).map(|k| y[k].conj() * x[n - 1 - k].conj()).sum()
}

fn cnorm(x: &[Complex64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn cdot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

type SeparableResult = (Vec<f64>, Vec<f64>, Vec<ProductState>);

fn separable_window(p: &GalerkinProblem, lo: f64, hi: f64) -> Result<SeparableResult> {
    let (mu_lo, mu_hi) = (p.axis1.eigenvalues(lo), p.axis1.eigenvalues(hi));
    let (nu_lo, nu_hi) = (p.axis2.eigenvalues(lo), p.axis2.eigenvalues(hi));
    let mut found: Vec<(f64, [usize; 2])> = Vec::new();
    for i in 0..mu_lo.len() {
        let j0 = nu_lo.partition_point(|v| *v < -mu_lo[i]);
        let j1 = nu_hi.partition_point(|v| *v <= -mu_hi[i]);
        for j in j0..j1 {
            let f = |l: f64| p.axis1.eigenvalue(l, i) + p.axis2.eigenvalue(l, j);
            let lambda = if mu_lo[i] + nu_lo[j] == 0.0 {
                lo
            } else if mu_hi[i] + nu_hi[j] == 0.0 {
                hi
            } else {
                let mut conv = SimpleConvergency {
                    eps: 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0),
                    max_iter: 200,
                };
                find_root_brent(lo, hi, f, &mut conv)
                    .map_err(|e| Error::NotConverged(format!("branch ({i}, {j}): {e:?}")))?
            };
            found.push((lambda, [i, j]));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut eigenvalues = Vec::with_capacity(found.len());
    let mut residuals = Vec::with_capacity(found.len());
    let mut states = Vec::with_capacity(found.len());
    for &(lambda, [i, j]) in &found {
        let (x, ri, ovx) = chiral_vector(&p.axis1, lambda, i);
        let (y, rj, ovy) = chiral_vector(&p.axis2, lambda, j);
        let mu = p.axis1.eigenvalue(lambda, i);
        let nu = p.axis2.eigenvalue(lambda, j);
        let rx: Vec<Complex64> = p
            .axis1
            .apply(lambda, &x)
            .iter()
            .zip(&x)
            .map(|(a, b)| a - mu * b)
            .collect();
        let ry: Vec<Complex64> = p
            .axis2
            .apply(lambda, &y)
            .iter()
            .zip(&y)
            .map(|(a, b)| a - nu * b)
            .collect();
        let ux = p.axis1.apply_weight(&x);
        let vy = p.axis2.apply_weight(&y);
        let bnorm2 = cnorm(&ux).powi(2) + cnorm(&vy).powi(2) + 2.0 * (cdot(&x, &ux) * cdot(&vy, &y)).re;
        let res = (cnorm(&rx) + cnorm(&ry) + (mu + nu).abs()) / bnorm2.max(0.0).sqrt();
        eigenvalues.push(lambda);
        residuals.push(res);
        states.push(ProductState {
            branch: [i, j],
            x,
            y,
            reversed_branch: [ri, rj],
            reversal_overlap: ovx * ovy,
        });
    }
    Ok((eigenvalues, residuals, states))
}

fn generalized_residual(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>, lambda: f64, v: &DVector<Complex64>) -> f64 {
    let bv = b * v;
    let r = a * v - &bv * Complex64::new(lambda, 0.0);
    r.norm() / bv.norm()
}

fn dense_window(p: &GalerkinProblem, lo: f64, hi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.dim();
    if n > DENSE_MAX_DIM {
        return Err(invalid(
            "m",
            format!("dense solver limited to dimension {DENSE_MAX_DIM}, got {n}"),
        ));
    }
    let (a, b) = p.dense_pair();
    let chol = b.clone().cholesky().ok_or(Error::NotPositive {
        min_eig: p.mass_min_eig,
    })?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::NotConverged("triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&x.adjoint())
        .ok_or_else(|| Error::NotConverged("triangular solve".into()))?;
    let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = hermitian_eigen(&c);
    let lt = l.adjoint();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (col, &e) in eig.eigenvalues.iter().enumerate() {
        if e < lo || e > hi {
            continue;
        }
        let y = eig.eigenvectors.column(col).into_owned();
        let v = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::NotConverged("back substitution".into()))?;
        out.push((e, generalized_residual(&a, &b, e, &v)));
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(out.into_iter().unzip())
}

/// Shift-invert subspace iteration. Solves with `A - sigma B` use the
/// Kronecker-sum form through dense 1-D eigendecompositions.
fn shift_invert_window(p: &GalerkinProblem, lo: f64, hi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let sigma = 0.5 * (lo + hi);
    let wanted = p.count_below(hi + cluster_tol(hi)) - p.count_below(lo);
    if wanted == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let (n1, n2) = (p.axis1.dim(), p.axis2.dim());
    let n = n1 * n2;
    let block = (wanted + wanted.max(16)).min(n);
    let e1 = hermitian_eigen(&p.axis1.dense(sigma));
    let e2 = hermitian_eigen(&p.axis2.dense(sigma));
    let (q1, q2) = (&e1.eigenvectors, &e2.eigenvectors);
    let solve = |r: &DMatrix<Complex64>| -> Result<DMatrix<Complex64>> {
        let mut z = q1.adjoint() * r * q2.map(|c| c.conj());
        for b in 0..n2 {
            for a in 0..n1 {
                let d = e1.eigenvalues[a] + e2.eigenvalues[b];
                if d == 0.0 {
                    return Err(Error::NotConverged("shift is an exact eigenvalue".into()));
                }
                z[(a, b)] /= d;
            }
        }
        Ok(q1 * z * q2.transpose())
    };
    let mut basis = DMatrix::from_fn(n, block, |r, c| {
        Complex64::new(
            ((r * 31 + c * 17) as f64 * 0.754_877_666).sin(),
            ((r * 7 + c * 3) as f64).cos(),
        )
    });
    let reshape = |col: &[Complex64]| DMatrix::from_column_slice(n1, n2, col);
    let mut last: Vec<(f64, f64)> = Vec::new();
    for _ in 0..500 {
        let mut next = DMatrix::zeros(n, block);
        let mut anext = DMatrix::zeros(n, block);
        let mut bnext = DMatrix::zeros(n, block);
        for c in 0..block {
            let x = reshape(basis.column(c).as_slice());
            let (_, bx) = p.apply_ab(&x);
            let y = solve(&bx)?;
            let (ay, by) = p.apply_ab(&y);
            next.column_mut(c).copy_from_slice(y.as_slice());
            anext.column_mut(c).copy_from_slice(ay.as_slice());
            bnext.column_mut(c).copy_from_slice(by.as_slice());
        }
        let ar = next.adjoint() * &anext;
        let br = next.adjoint() * &bnext;
        let ar = (&ar + ar.adjoint()) * Complex64::new(0.5, 0.0);
        let br = (&br + br.adjoint()) * Complex64::new(0.5, 0.0);
        let chol = br
            .cholesky()
            .ok_or_else(|| Error::NotConverged("subspace lost rank".into()))?;
        let l = chol.l();
        let x = l
            .solve_lower_triangular(&ar)
            .ok_or_else(|| Error::NotConverged("ritz".into()))?;
        let c = l
            .solve_lower_triangular(&x.adjoint())
            .ok_or_else(|| Error::NotConverged("ritz".into()))?;
        let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = hermitian_eigen(&c);
        let coeffs = l
            .adjoint()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or_else(|| Error::NotConverged("ritz".into()))?;
        basis = &next * &coeffs;
        let aritz = &anext * &coeffs;
        let britz = &bnext * &coeffs;
        let mut inside: Vec<(f64, f64)> = Vec::new();
        for (k, &theta) in eig.eigenvalues.iter().enumerate() {
            if theta < lo || theta > hi {
                continue;
            }
            let bv = britz.column(k);
            let r = aritz.column(k) - bv * Complex64::new(theta, 0.0);
            inside.push((theta, r.norm() / bv.norm()));
        }
        for mut col in basis.column_iter_mut() {
            let s = col.norm();
            col /= Complex64::new(s, 0.0);
        }
        inside.sort_by(|x, y| x.0.total_cmp(&y.0));
        let done = inside.len() == wanted && inside.iter().all(|(_, r)| *r <= 1e-11);
        last = inside;
        if done {
            return Ok(last.into_iter().unzip());
        }
    }
    Err(Error::NotConverged(format!(
        "shift-invert found {} of {wanted} eigenvalues after 500 sweeps",
        last.len()
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub predicted_index: usize,
    pub computed_index: usize,
    pub predicted: f64,
    pub computed: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub tol: f64,
    pub pairs: Vec<MatchedPair>,
    pub max_error: f64,
    pub unmatched_predicted: Vec<usize>,
    pub unmatched_computed: usize,
}

/// Greedy nearest-neighbour pairing without replacement; candidate pairs
/// farther apart than `tol` are never formed.
pub fn match_spectra(predicted: &[f64], computed: &[f64], tol: f64) -> MatchReport {
    let mut sorted: Vec<(f64, usize)> = computed.iter().cloned().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, &pv) in predicted.iter().enumerate() {
        let start = sorted.partition_point(|(v, _)| *v < pv - tol);
        for &(cv, ci) in sorted[start..].iter().take_while(|(v, _)| *v <= pv + tol) {
            cand.push(((cv - pv).abs(), pi, ci));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_c = vec![false; computed.len()];
    let mut pairs = Vec::new();
    for (err, pi, ci) in cand {
        if used_p[pi] || used_c[ci] {
            continue;
        }
        used_p[pi] = true;
        used_c[ci] = true;
        pairs.push(MatchedPair {
            predicted_index: pi,
            computed_index: ci,
            predicted: predicted[pi],
            computed: computed[ci],
            error: err,
        });
    }
    pairs.sort_by_key(|p| p.predicted_index);
    MatchReport {
        tol,
        max_error: pairs.iter().map(|p| p.error).fold(0.0, f64::max),
        unmatched_predicted: (0..predicted.len()).filter(|&i| !used_p[i]).collect(),
        unmatched_computed: used_c.iter().filter(|u| !**u).count(),
        pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapBin {
    /// `log10` of the lower edge; the first bin also holds exact zeros.
    pub log10_lo: f64,
    pub log10_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStatistics {
    pub count: usize,
    pub threshold: f64,
    pub near_degenerate: usize,
    pub fraction: f64,
    pub histogram: Vec<GapBin>,
}

/// Decade bins for nearest-neighbour gaps between `1e-16` and `1e2`.
const GAP_DECADES: std::ops::Range<i32> = -16..2;

pub fn gap_statistics(eigenvalues: &[f64], threshold: f64) -> Result<GapStatistics> {
    let n = eigenvalues.len();
    if n < 2 {
        return Err(Error::TooFewEigenvalues(n));
    }
    let min_gap: Vec<f64> = (0..n)
        .map(|j| {
            let prev = if j > 0 {
                eigenvalues[j] - eigenvalues[j - 1]
            } else {
                f64::INFINITY
            };
            let next = if j + 1 < n {
                eigenvalues[j + 1] - eigenvalues[j]
            } else {
                f64::INFINITY
            };
            prev.min(next).abs()
        })
        .collect();
    let near_degenerate = min_gap.iter().filter(|g| **g <= threshold).count();
    let mut histogram: Vec<GapBin> = GAP_DECADES
        .map(|d| GapBin {
            log10_lo: d as f64,
            log10_hi: d as f64 + 1.0,
            count: 0,
        })
        .collect();
    let last = histogram.len() - 1;
    for g in &min_gap {
        let d = if *g > 0.0 {
            g.log10().floor() as i32
        } else {
            GAP_DECADES.start
        };
        let slot = (d - GAP_DECADES.start).clamp(0, last as i32) as usize;
        histogram[slot].count += 1;
    }
    Ok(GapStatistics {
        count: n,
        threshold,
        near_degenerate,
        fraction: near_degenerate as f64 / n as f64,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReversalPair {
    pub state: usize,
    /// Index of the time-reversed state in the window, if present.
    pub partner: Option<usize>,
    pub self_paired: bool,
    pub splitting: f64,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversalReport {
    pub pairs: Vec<ReversalPair>,
    /// `max |Gamma^2 x - x|` over retained 1-D factors.
    pub involution_defect: f64,
    pub max_splitting: f64,
}

/// Pairs each retained eigenvector with its image under
/// `Gamma: psi(x) -> conj(psi(x))`, i.e. `k -> -k` with conjugation.
pub fn reversal_pairing(window: &SpectrumWindow) -> Result<ReversalReport> {
    let states = window
        .states
        .as_ref()
        .ok_or_else(|| invalid("window", "eigenvectors were not retained"))?;
    let by_branch: HashMap<[usize; 2], usize> = states.iter().enumerate().map(|(i, s)| (s.branch, i)).collect();
    let gamma = |x: &[Complex64]| -> Vec<Complex64> { x.iter().rev().map(|c| c.conj()).collect() };
    let mut involution_defect: f64 = 0.0;
    let mut pairs = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        for v in [&s.x, &s.y] {
            let back = gamma(&gamma(v));
            let d = back
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            involution_defect = involution_defect.max(d);
        }
        let partner = by_branch.get(&s.reversed_branch).copied();
        pairs.push(ReversalPair {
            state: i,
            partner,
            self_paired: s.reversed_branch == s.branch,
            splitting: partner.map_or(f64::NAN, |j| (window.eigenvalues[j] - window.eigenvalues[i]).abs()),
            overlap: s.reversal_overlap,
        });
    }
    let max_splitting = pairs
        .iter()
        .filter_map(|p| p.partner.map(|_| p.splitting))
        .fold(0.0, f64::max);
    Ok(ReversalReport {
        pairs,
        involution_defect,
        max_splitting,
    })
}

/// Eigenvalues below `cutoff` of `(hD)^2 / 2 + k1 omega1(x)` on the circle,
/// Fourier modes `|m| <= modes`. The computation is repeated with 16 more
/// modes and must agree to `1e-9`.
pub fn larmor_spectrum(omega1: &TrigSeries, k1: f64, h: f64, modes: usize, cutoff: f64) -> Result<Vec<f64>> {
    if modes < 64 {
        return Err(invalid("m", format!("{modes} below 64")));
    }
    if !(h > 0.0) || !k1.is_finite() {
        return Err(invalid("h", "need h > 0 and finite k1"));
    }
    let solve = |m: usize| -> Vec<f64> {
        // (hD)^2/2 + k1 w = L(-k1) for a pencil with step h/sqrt(2)
        let p = Pencil1d::new(h / 2f64.sqrt(), m, omega1);
        let mut e: Vec<f64> = p.eigenvalues(-k1);
        e.retain(|x| *x < cutoff);
        e
    };
    let coarse = solve(modes);
    let fine = solve(modes + 16);
    if coarse.len() != fine.len() {
        return Err(Error::NotConverged(format!(
            "{} eigenvalues below cutoff at M={modes}, {} at M={}",
            coarse.len(),
            fine.len(),
            modes + 16
        )));
    }
    let shift = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if shift > 1e-9 {
        return Err(Error::NotConverged(format!(
            "refinement moved eigenvalues by {shift:e}"
        )));
    }
    Ok(fine)
}
