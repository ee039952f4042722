//! Time reparametrisation between Hamiltonians sharing an energy surface,
//! torus averages, and the conjugacy to linear flow.
//!
//! For a pair `(H, K)` with `{H = E} = {K = E'}` the vector fields are
//! parallel there, `X_K = G X_H`. On a `K`-torus with frequencies `w~` the
//! `H`-flow is quasi-periodic with frequencies `w~ / <G>`, where `<G>` is
//! the average over the `K`-angles `phi`.
//!
//! The conjugacy `phi = psi + w~ f(psi)` to the linear `H`-flow in angles
//! `psi` satisfies `w~ . grad f = <G>/G - 1` with `G` sampled in `psi`.
//! Its inverse `psi = phi - w~ g(phi)` satisfies the linear equation
//! `w~ . grad g = 1 - G/<G>` in `phi`; [`linearizing_samples`] uses it to
//! resample `G` on a uniform `psi` grid.

use std::f64::consts::PI;
use std::ops::ControlFlow;

use num_complex::Complex64;
use serde::Serialize;

use crate::action_angle::{liouville_form, TorusAngles};
use crate::error::{invalid, Error, Result};
use crate::flow::{self, least_squares_slope};
use crate::models::{jacobi_from_mechanical, HamiltonianModel, Liouville, Mechanical, PhasePoint, WaterWave};
use crate::trig::{fft2, wavenumber, TorusField};

/// Energy-surface tolerance of [`time_factor`].
pub const SURFACE_TOL: f64 = 1e-10;
/// Parallelism defect above which a pair is rejected.
pub const PARALLEL_TOL: f64 = 1e-6;
pub const SMALL_DIVISOR: f64 = 1e-12;

/// Two Hamiltonians and the levels at which they share an energy surface.
#[derive(Debug, Clone)]
pub struct MjPair {
    pub h: HamiltonianModel,
    pub k: HamiltonianModel,
    pub energy_h: f64,
    pub energy_k: f64,
}

impl MjPair {
    pub fn new(h: HamiltonianModel, k: HamiltonianModel, energy_h: f64, energy_k: f64) -> Self {
        MjPair {
            h,
            k,
            energy_h,
            energy_k,
        }
    }

    /// `H = |p|^2/2 + V` and its Jacobi metric at `E`; `{H = E} = {K = 1}`.
    pub fn mechanical_jacobi(potential: TorusField, energy: f64) -> Result<Self> {
        let base = Mechanical::flat(potential);
        let jac = jacobi_from_mechanical(&base, energy)?;
        Ok(MjPair::new(
            HamiltonianModel::Mechanical(base),
            HamiltonianModel::JacobiMetric(jac),
            energy,
            1.0,
        ))
    }

    /// Water waves over the depth realising `metric` at `E`, paired with the
    /// metric; `{H = E} = {K = 1}`.
    pub fn water_wave_liouville(metric: Liouville, dispersion: TorusField, energy: f64) -> Result<Self> {
        let ww = WaterWave::from_liouville_metric(metric.clone(), dispersion, energy)?;
        Ok(MjPair::new(
            HamiltonianModel::WaterWave(ww),
            HamiltonianModel::Liouville(metric),
            energy,
            1.0,
        ))
    }

    /// `H = K`.
    pub fn identical(model: HamiltonianModel, energy: f64) -> Self {
        MjPair::new(model.clone(), model, energy, energy)
    }

    /// Torus `{K = E', F = c}` of the separable member.
    pub fn torus(&self, sep_const: f64, signs: [f64; 2]) -> Result<TorusAngles> {
        TorusAngles::new(&liouville_form(&self.k)?, self.energy_k, sep_const, signs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Parallelism {
    /// Least-squares factor `<X_K, X_H> / |X_H|^2`.
    pub g: f64,
    /// `|X_K - G X_H| / |X_K|`.
    pub defect: f64,
}

/// Parallelism of `X_K` and `X_H` at `pt`, without surface checks.
pub fn parallelism(h: &HamiltonianModel, k: &HamiltonianModel, pt: &PhasePoint) -> Result<Parallelism> {
    let xh = h.vector_field(pt)?;
    let xk = k.vector_field(pt)?;
    let nh: f64 = xh.iter().map(|v| v * v).sum();
    if nh.sqrt() < 1e-10 {
        return Err(Error::Degenerate(format!("|X_H| = {:e} at {pt:?}", nh.sqrt())));
    }
    let g = xh.iter().zip(&xk).map(|(a, b)| a * b).sum::<f64>() / nh;
    let nk: f64 = xk.iter().map(|v| v * v).sum::<f64>().sqrt();
    let res: f64 = xh.iter().zip(&xk).map(|(a, b)| (b - g * a).powi(2)).sum::<f64>().sqrt();
    Ok(Parallelism {
        g,
        defect: if nk > 0.0 { res / nk } else { res },
    })
}

/// `G` with `X_K = G X_H` at a point of the shared energy surface.
pub fn time_factor(pair: &MjPair, pt: &PhasePoint) -> Result<f64> {
    let dh = pair.h.eval(pt)? - pair.energy_h;
    let dk = pair.k.eval(pt)? - pair.energy_k;
    if dh.abs() > SURFACE_TOL || dk.abs() > SURFACE_TOL {
        return Err(Error::NotOnSurface(format!(
            "H - E = {dh:e}, K - E' = {dk:e} at {pt:?}"
        )));
    }
    let par = parallelism(&pair.h, &pair.k, pt)?;
    if par.defect > PARALLEL_TOL {
        return Err(Error::NotParallel { defect: par.defect });
    }
    Ok(par.g)
}

/// `G` on the uniform `n1 x n2` grid of `K`-angles, index `i1 + n1 i2`.
pub fn g_grid(pair: &MjPair, torus: &TorusAngles, n1: usize, n2: usize) -> Result<Vec<f64>> {
    let pts = torus.grid(n1, n2)?;
    let g = pts.iter().map(|p| time_factor(pair, p)).collect::<Result<Vec<f64>>>()?;
    if let Some(bad) = g.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Degenerate(format!("time factor {bad} is not positive")));
    }
    Ok(g)
}

/// `<G>` by the periodic trapezoidal rule in `K`-angles.
pub fn average_g(pair: &MjPair, torus: &TorusAngles, n1: usize, n2: usize) -> Result<f64> {
    let g = g_grid(pair, torus, n1, n2)?;
    Ok(g.iter().sum::<f64>() / g.len() as f64)
}

/// Time average of `G` along the `K`-flow from `phi0` over `[0, t_end]`.
pub fn ergodic_average(pair: &MjPair, torus: &TorusAngles, phi0: [f64; 2], t_end: f64, tol: f64) -> Result<f64> {
    let pt0 = torus.phase_point(torus.invert(phi0)?);
    let (_, acc) =
        flow::integrate_with_quadrature(&pair.k, &pt0, t_end, tol, |p| Ok(parallelism(&pair.h, &pair.k, p)?.g))?;
    Ok(acc / t_end)
}

fn check_grid(g: &[f64], n1: usize, n2: usize) -> Result<()> {
    if n1 < 4 || n2 < 4 || g.len() != n1 * n2 {
        return Err(invalid("grid", format!("{} samples for {n1} x {n2}", g.len())));
    }
    if g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("grid", "time factor samples must be positive"));
    }
    Ok(())
}

fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn divisor(k: [i64; 2], omega: [f64; 2]) -> f64 {
    k[0] as f64 * omega[0] + k[1] as f64 * omega[1]
}

/// Zero-mean `g` on the `K`-angle grid with `w~ . grad g = 1 - G/<G>`, so
/// that `psi = phi - w~ g(phi)` linearises the `H`-flow.
pub fn inverse_conjugacy(g_phi: &[f64], n1: usize, n2: usize, omega: [f64; 2]) -> Result<Vec<f64>> {
    check_grid(g_phi, n1, n2)?;
    let n = (n1 * n2) as f64;
    let mean = g_phi.iter().sum::<f64>() / n;
    let mut spec: Vec<Complex64> = g_phi.iter().map(|g| Complex64::new(1.0 - g / mean, 0.0)).collect();
    fft2(&mut spec, n1, n2, false);
    let i = Complex64::new(0.0, 1.0);
    for j2 in 0..n2 {
        for j1 in 0..n1 {
            let idx = j1 + n1 * j2;
            let k = [wavenumber(j1, n1), wavenumber(j2, n2)];
            let nyq = (n1 % 2 == 0 && j1 == n1 / 2) || (n2 % 2 == 0 && j2 == n2 / 2);
            if k == [0, 0] || nyq {
                spec[idx] = Complex64::new(0.0, 0.0);
                continue;
            }
            let d = divisor(k, omega);
            if d.abs() < SMALL_DIVISOR {
                return Err(Error::SmallDivisor { k, divisor: d });
            }
            spec[idx] /= i * d * n;
        }
    }
    fft2(&mut spec, n1, n2, true);
    Ok(spec.iter().map(|z| z.re).collect())
}

/// Samples of `G` on the uniform grid of linearising angles `psi`, given
/// samples `g_phi` on the uniform grid of `K`-angles. The result is band
/// limited to `|k_i| <= n_i / 3`.
pub fn linearizing_samples(g_phi: &[f64], n1: usize, n2: usize, omega: [f64; 2]) -> Result<Vec<f64>> {
    let inv = inverse_conjugacy(g_phi, n1, n2, omega)?;
    let n = (n1 * n2) as f64;
    let mean = g_phi.iter().sum::<f64>() / n;
    let sigma: Vec<f64> = g_phi.iter().map(|g| 1.0 - g / mean).collect();
    // psi = phi - w~ g(phi) at every phi node; modes above n/3 are aliased
    // by the nonuniform transform and are dropped
    let kx = n1 / 3;
    let ky = n2 / 3;
    let w1 = 2 * kx + 1;
    let w2 = 2 * ky + 1;
    let mut rho_hat = vec![Complex64::new(0.0, 0.0); w1 * w2];
    let mut pow1 = vec![Complex64::new(0.0, 0.0); w1];
    let mut pow2 = vec![Complex64::new(0.0, 0.0); w2];
    for j2 in 0..n2 {
        for j1 in 0..n1 {
            let idx = j1 + n1 * j2;
            let gv = inv[idx];
            let psi = [
                2.0 * PI * j1 as f64 / n1 as f64 - omega[0] * gv,
                2.0 * PI * j2 as f64 / n2 as f64 - omega[1] * gv,
            ];
            fill_powers(&mut pow1, psi[0], kx);
            fill_powers(&mut pow2, psi[1], ky);
            let s = sigma[idx];
            for (b, p2) in pow2.iter().enumerate() {
                let row = &mut rho_hat[b * w1..(b + 1) * w1];
                let f = p2 * s;
                for (r, p1) in row.iter_mut().zip(&pow1) {
                    *r += f * p1;
                }
            }
        }
    }
    let mut grid = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for b in 0..w2 {
        for a in 0..w1 {
            let k1 = a as i64 - kx as i64;
            let k2 = b as i64 - ky as i64;
            let j1 = k1.rem_euclid(n1 as i64) as usize;
            let j2 = k2.rem_euclid(n2 as i64) as usize;
            grid[j1 + n1 * j2] = rho_hat[a + w1 * b] / n;
        }
    }
    fft2(&mut grid, n1, n2, true);
    let out: Vec<f64> = grid.iter().map(|r| mean / (1.0 + r.re)).collect();
    if out.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::IllConditioned("resampled time factor not positive".into()));
    }
    Ok(out)
}

/// `pow[k + kmax] = exp(-i k x)` for `|k| <= kmax`.
fn fill_powers(pow: &mut [Complex64], x: f64, kmax: usize) {
    let z = Complex64::from_polar(1.0, -x);
    pow[kmax] = Complex64::new(1.0, 0.0);
    for k in 1..=kmax {
        pow[kmax + k] = pow[kmax + k - 1] * z;
        pow[kmax - k] = pow[kmax - k + 1] * z.conj();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourierCoeff {
    pub k: [i64; 2],
    pub re: f64,
    pub im: f64,
}

/// Spectral solution of `w~ . grad f = <G>/G - 1` on a grid of linearising
/// angles; `<G>` is the harmonic mean of the samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugacyData {
    pub n1: usize,
    pub n2: usize,
    pub omega: [f64; 2],
    pub mean_g: f64,
    pub k_max: u32,
    /// `max |w~ . grad f - rho|` on the grid.
    pub residual: f64,
    pub coefficients: Vec<FourierCoeff>,
    #[serde(skip)]
    pub g: Vec<f64>,
    #[serde(skip)]
    pub df: [Vec<f64>; 2],
}

pub fn solve_conjugacy(
    g: &[f64],
    n1: usize,
    n2: usize,
    omega: [f64; 2],
    k_max: u32,
    residual_bound: f64,
) -> Result<ConjugacyData> {
    check_grid(g, n1, n2)?;
    let km = k_max as usize;
    if 2 * km >= n1 || 2 * km >= n2 {
        return Err(invalid("k_max", format!("needs grids finer than {}", 2 * km)));
    }
    let n = (n1 * n2) as f64;
    let mean_g = n / g.iter().map(|v| 1.0 / v).sum::<f64>();
    let rho: Vec<f64> = g.iter().map(|v| mean_g / v - 1.0).collect();
    let mut spec = to_complex(&rho);
    fft2(&mut spec, n1, n2, false);
    let i = Complex64::new(0.0, 1.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut fhat = vec![zero; n1 * n2];
    let mut coefficients = Vec::new();
    for j2 in 0..n2 {
        for j1 in 0..n1 {
            let k = [wavenumber(j1, n1), wavenumber(j2, n2)];
            if k == [0, 0] || k[0].unsigned_abs() as usize > km || k[1].unsigned_abs() as usize > km {
                continue;
            }
            let d = divisor(k, omega);
            if d.abs() < SMALL_DIVISOR {
                return Err(Error::SmallDivisor { k, divisor: d });
            }
            let c = spec[j1 + n1 * j2] / (i * d * n);
            fhat[j1 + n1 * j2] = c;
            coefficients.push(FourierCoeff { k, re: c.re, im: c.im });
        }
    }
    coefficients.sort_by_key(|c| (c.k[0], c.k[1]));
    let mut df = [Vec::new(), Vec::new()];
    for (axis, out) in df.iter_mut().enumerate() {
        let mut d = fhat.clone();
        for j2 in 0..n2 {
            for j1 in 0..n1 {
                let k = if axis == 0 {
                    wavenumber(j1, n1)
                } else {
                    wavenumber(j2, n2)
                };
                d[j1 + n1 * j2] *= i * k as f64;
            }
        }
        fft2(&mut d, n1, n2, true);
        *out = d.iter().map(|z| z.re).collect();
    }
    let residual = (0..n1 * n2)
        .map(|j| (omega[0] * df[0][j] + omega[1] * df[1][j] - rho[j]).abs())
        .fold(0.0, f64::max);
    if residual > residual_bound {
        return Err(Error::ResidualTooLarge {
            residual,
            bound: residual_bound,
        });
    }
    Ok(ConjugacyData {
        n1,
        n2,
        omega,
        mean_g,
        k_max,
        residual,
        coefficients,
        g: g.to_vec(),
        df,
    })
}

impl ConjugacyData {
    /// `f` at arbitrary angles from its coefficients.
    pub fn eval(&self, psi: [f64; 2]) -> f64 {
        self.coefficients
            .iter()
            .map(|c| {
                let ph = c.k[0] as f64 * psi[0] + c.k[1] as f64 * psi[1];
                c.re * ph.cos() - c.im * ph.sin()
            })
            .sum()
    }
}

/// `max |det(Id + w~ (x) grad f) - <G>/G|` over the grid.
pub fn verify_det_identity(data: &ConjugacyData) -> f64 {
    let w = data.omega;
    (0..data.n1 * data.n2)
        .map(|j| {
            let (a, b) = (data.df[0][j], data.df[1][j]);
            let m = [[1.0 + w[0] * a, w[0] * b], [w[1] * a, 1.0 + w[1] * b]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            (det - data.mean_g / data.g[j]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyRescale {
    pub measured: [f64; 2],
    pub predicted: [f64; 2],
    /// `|measured - predicted| / |w~|`.
    pub rel_err: f64,
    pub stderr: [f64; 2],
    pub duration: f64,
}

/// Frequencies of the `H`-flow on a `K`-torus, measured as the growth rate
/// of the lifted torus angles along one long orbit, against `w~ / <G>`.
pub fn verify_frequency_rescale(
    pair: &MjPair,
    torus: &TorusAngles,
    mean_g: f64,
    t_end: f64,
    tol: f64,
) -> Result<FrequencyRescale> {
    let t0 = torus.invert([0.1, 0.2])?;
    let pt0 = torus.phase_point(t0);
    let mut times = vec![0.0];
    let mut phis = vec![torus.angles(t0)];
    let mut prev = t0;
    flow::run_flow(&pair.h, &pt0, t_end, tol, |step| {
        let pt = PhasePoint::from_state(&step.y1);
        prev = torus.aux_angles(&pt, Some(prev));
        times.push(step.t1());
        phis.push(torus.angles(prev));
        Ok(ControlFlow::Continue(()))
    })?;
    if times.len() < 100 {
        return Err(Error::TooFewSamples {
            needed: 100,
            got: times.len(),
        });
    }
    let mut measured = [0.0; 2];
    let mut stderr = [0.0; 2];
    for i in 0..2 {
        let ys: Vec<f64> = phis.iter().map(|p| p[i]).collect();
        let (s, e) = least_squares_slope(&times, &ys);
        measured[i] = s;
        stderr[i] = e;
    }
    let w = torus.frequencies();
    let predicted = [w[0] / mean_g, w[1] / mean_g];
    let rel_err = (measured[0] - predicted[0]).hypot(measured[1] - predicted[1]) / w[0].hypot(w[1]);
    Ok(FrequencyRescale {
        measured,
        predicted,
        rel_err,
        stderr,
        duration: t_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::FieldTerm;

    fn potential() -> TorusField {
        TorusField::new(vec![
            FieldTerm {
                k: [1, 0],
                a: 0.3,
                b: 0.0,
            },
            FieldTerm {
                k: [0, 1],
                a: 0.2,
                b: 0.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn jacobi_time_factor_is_inverse_kinetic_energy() {
        let pair = MjPair::mechanical_jacobi(potential(), 1.0).unwrap();
        let x: [f64; 2] = [0.4, 1.3];
        let v = 0.3 * x[0].cos() + 0.2 * x[1].cos();
        let speed = (2.0 * (1.0 - v)).sqrt();
        let pt = PhasePoint::new(x, [speed * 0.6, speed * 0.8]);
        let g = time_factor(&pair, &pt).unwrap();
        assert!((g - 1.0 / (1.0 - v)).abs() < 1e-12);
        let off = PhasePoint::new(x, [speed, speed]);
        assert!(matches!(time_factor(&pair, &off), Err(Error::NotOnSurface(_))));
    }

    #[test]
    fn identical_pair_has_unit_factor() {
        let m = HamiltonianModel::Liouville(Liouville::flat());
        let pair = MjPair::identical(m, 1.0);
        let pt = PhasePoint::new([0.2, 0.1], [0.6, 0.8]);
        assert!((time_factor(&pair, &pt).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_mode_conjugacy() {
        let (n1, n2) = (32, 32);
        let omega = [1.0, 0.5 * (1.0 + 5f64.sqrt())];
        let eps = 0.1;
        let g: Vec<f64> = (0..n1 * n2)
            .map(|j| {
                let p1 = 2.0 * PI * (j % n1) as f64 / n1 as f64;
                1.0 / (1.0 + eps * p1.cos())
            })
            .collect();
        let data = solve_conjugacy(&g, n1, n2, omega, 8, 1e-8).unwrap();
        assert!((data.mean_g - 1.0).abs() < 1e-14);
        let f = data.eval([0.7, 0.3]);
        assert!((f - eps / omega[0] * 0.7f64.sin()).abs() < 1e-14);
        assert!(verify_det_identity(&data) < 1e-12);
    }

    #[test]
    fn constant_factor_gives_zero_conjugacy() {
        let data = solve_conjugacy(&vec![2.0; 256], 16, 16, [1.0, 1.3], 4, 1e-8).unwrap();
        assert!(data.coefficients.iter().all(|c| c.re == 0.0 && c.im == 0.0));
        assert_eq!(verify_det_identity(&data), 0.0);
    }

    #[test]
    fn resonant_frequency_is_a_small_divisor() {
        let g: Vec<f64> = (0..256).map(|j| 1.0 + 0.1 * ((j % 16) as f64).cos()).collect();
        assert!(matches!(
            solve_conjugacy(&g, 16, 16, [1.0, 1.0], 4, 1e-8),
            Err(Error::SmallDivisor { .. })
        ));
    }
    #[test]
    fn forward_and_inverse_conjugacies_agree() {
        let (n1, n2) = (48, 48);
        let omega = [1.0, 0.5 * (1.0 + 5f64.sqrt())];
        let phi = |j: usize| {
            [
                2.0 * PI * (j % n1) as f64 / n1 as f64,
                2.0 * PI * (j / n1) as f64 / n2 as f64,
            ]
        };
        let g_phi: Vec<f64> = (0..n1 * n2)
            .map(|j| {
                let p = phi(j);
                1.0 / (1.0 + 0.1 * p[0].cos() + 0.05 * (p[0] - p[1]).sin())
            })
            .collect();
        let inv = inverse_conjugacy(&g_phi, n1, n2, omega).unwrap();
        let g_psi = linearizing_samples(&g_phi, n1, n2, omega).unwrap();
        let data = solve_conjugacy(&g_psi, n1, n2, omega, 15, 1e-8).unwrap();
        // psi = phi - w g(phi) and phi = psi + w f(psi) give f(psi) = g(phi) up to a constant
        let d: Vec<f64> = (0..n1 * n2)
            .map(|j| {
                let p = phi(j);
                data.eval([p[0] - omega[0] * inv[j], p[1] - omega[1] * inv[j]]) - inv[j]
            })
            .collect();
        let spread =
            d.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - d.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-8, "spread {spread:e}");
    }
}
