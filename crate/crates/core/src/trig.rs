//! Truncated trigonometric series on the circle and on the 2-torus.
//!
//! All coefficient fields of the Hamiltonian families (the Liouville
//! functions `u`, `v`, potentials, depth and dispersion profiles) are stored
//! as finite Fourier sums so that Galerkin assembly can read off exact
//! Fourier coefficients.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Number of grid points used for positivity / extremum probes.
pub const PROBE_POINTS: usize = 4096;

#[derive(Serialize, Deserialize)]
struct TrigSeriesRepr {
    cos: Vec<f64>,
    #[serde(default)]
    sin: Vec<f64>,
}

/// `a_0 + sum_{n=1}^N (a_n cos(n t) + b_n sin(n t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrigSeriesRepr", into = "TrigSeriesRepr")]
pub struct TrigSeries {
    cos: Vec<f64>,
    sin: Vec<f64>,
    positive: bool,
}

impl TryFrom<TrigSeriesRepr> for TrigSeries {
    type Error = crate::error::Error;
    fn try_from(r: TrigSeriesRepr) -> Result<Self> {
        TrigSeries::new(r.cos, r.sin)
    }
}

impl From<TrigSeries> for TrigSeriesRepr {
    fn from(s: TrigSeries) -> Self {
        TrigSeriesRepr { cos: s.cos, sin: s.sin }
    }
}

impl TrigSeries {
    /// `cos` holds `a_0..a_N`, `sin` holds `b_1..b_M`; the shorter list is
    /// zero padded.
    pub fn new(mut cos: Vec<f64>, mut sin: Vec<f64>) -> Result<Self> {
        if cos.is_empty() {
            cos.push(0.0);
        }
        if cos.iter().chain(sin.iter()).any(|c| !c.is_finite()) {
            return Err(invalid("trig_series", "non-finite coefficient"));
        }
        let degree = (cos.len() - 1).max(sin.len());
        cos.resize(degree + 1, 0.0);
        sin.resize(degree, 0.0);
        let mut s = TrigSeries {
            cos,
            sin,
            positive: false,
        };
        s.positive = s.grid_min() > 0.0;
        Ok(s)
    }

    pub fn constant(c: f64) -> Self {
        TrigSeries::new(vec![c], vec![]).expect("finite constant")
    }

    /// `a0 + a1 cos t`.
    pub fn cosine(a0: f64, a1: f64) -> Self {
        TrigSeries::new(vec![a0, a1], vec![]).expect("finite coefficients")
    }

    pub fn degree(&self) -> usize {
        self.sin.len()
    }

    pub fn cos_coeffs(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_coeffs(&self) -> &[f64] {
        &self.sin
    }

    /// True iff the minimum over the probe grid is strictly positive.
    pub fn is_positive(&self) -> bool {
        self.positive
    }

    pub fn is_even(&self) -> bool {
        self.sin.iter().all(|&b| b == 0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_derivs(t)[0]
    }

    /// Value, first and second derivative at `t`.
    pub fn eval_derivs(&self, t: f64) -> [f64; 3] {
        let mut f = self.cos[0];
        let (mut d1, mut d2) = (0.0, 0.0);
        let step = Complex64::from_polar(1.0, t);
        let mut rot = Complex64::new(1.0, 0.0);
        for n in 1..=self.degree() {
            rot *= step;
            let (c, s) = (rot.re, rot.im);
            let (a, b) = (self.cos[n], self.sin[n - 1]);
            let nf = n as f64;
            f += a * c + b * s;
            d1 += nf * (b * c - a * s);
            d2 -= nf * nf * (a * c + b * s);
        }
        [f, d1, d2]
    }

    /// Complex Fourier coefficient `c_n` with `f(t) = sum_n c_n e^{i n t}`.
    pub fn fourier(&self, n: i64) -> Complex64 {
        let m = n.unsigned_abs() as usize;
        if m == 0 {
            return Complex64::new(self.cos[0], 0.0);
        }
        if m > self.degree() {
            return Complex64::new(0.0, 0.0);
        }
        let (a, b) = (self.cos[m], self.sin[m - 1]);
        if n > 0 {
            Complex64::new(0.5 * a, -0.5 * b)
        } else {
            Complex64::new(0.5 * a, 0.5 * b)
        }
    }

    fn probe(&self) -> impl Iterator<Item = f64> + '_ {
        (0..PROBE_POINTS).map(move |i| self.eval(2.0 * PI * i as f64 / PROBE_POINTS as f64))
    }

    pub fn grid_min(&self) -> f64 {
        self.probe().fold(f64::INFINITY, f64::min)
    }

    pub fn grid_max(&self) -> f64 {
        self.probe().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let cos = self.cos.iter().map(|a| a * factor).collect();
        let sin = self.sin.iter().map(|b| b * factor).collect();
        TrigSeries::new(cos, sin).expect("finite")
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let mut cos = self.cos.clone();
        cos[0] += c;
        TrigSeries::new(cos, self.sin.clone()).expect("finite")
    }

    pub fn plus(&self, other: &TrigSeries) -> Self {
        let d = self.degree().max(other.degree());
        let mut cos = vec![0.0; d + 1];
        let mut sin = vec![0.0; d];
        for (i, c) in cos.iter_mut().enumerate() {
            *c = self.cos.get(i).copied().unwrap_or(0.0) + other.cos.get(i).copied().unwrap_or(0.0);
        }
        for (i, s) in sin.iter_mut().enumerate() {
            *s = self.sin.get(i).copied().unwrap_or(0.0) + other.sin.get(i).copied().unwrap_or(0.0);
        }
        TrigSeries::new(cos, sin).expect("finite")
    }

    /// Mirror `t -> -t`.
    pub fn reflected(&self) -> Self {
        let sin = self.sin.iter().map(|b| -b).collect();
        TrigSeries::new(self.cos.clone(), sin).expect("finite")
    }

    /// Interpolating series of degree `< n/2` through `n` equispaced samples
    /// on `[0, 2pi)`, truncated to `max_degree`.
    pub fn from_samples(samples: &[f64], max_degree: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(invalid("samples", "need at least two samples"));
        }
        let spec = forward_fft(samples);
        let degree = max_degree.min((n - 1) / 2);
        let mut cos = vec![spec[0].re / n as f64];
        let mut sin = Vec::with_capacity(degree);
        for m in 1..=degree {
            let c = spec[m] / n as f64;
            cos.push(2.0 * c.re);
            sin.push(-2.0 * c.im);
        }
        TrigSeries::new(cos, sin)
    }

    /// Interpolant of a smooth periodic function, doubling the sample count
    /// from 64 until the top quarter of the spectrum is below `1e-14` of the
    /// largest coefficient (at most 16384 samples).
    pub fn from_function<F: Fn(f64) -> f64>(f: F) -> Result<Self> {
        let mut n = 64;
        loop {
            let samples: Vec<f64> = (0..n).map(|i| f(2.0 * PI * i as f64 / n as f64)).collect();
            if samples.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidModel("non-finite sample".into()));
            }
            let s = TrigSeries::from_samples(&samples, n / 2 - 1)?;
            let mags: Vec<f64> = (0..=s.degree())
                .map(|m| {
                    let b = if m == 0 { 0.0 } else { s.sin[m - 1] };
                    s.cos[m].hypot(b)
                })
                .collect();
            let top = mags.iter().cloned().fold(0.0, f64::max);
            let tail = mags[3 * mags.len() / 4..].iter().cloned().fold(0.0, f64::max);
            if tail <= 1e-14 * top || n >= 16384 {
                return Ok(s);
            }
            n *= 2;
        }
    }

    /// Mean `m` and zero-at-origin periodic part `P` of the primitive:
    /// `int_0^t f = m t + P(t)`.
    pub fn primitive(&self) -> (f64, TrigSeries) {
        let d = self.degree();
        let mut cos = vec![0.0; d + 1];
        let mut sin = vec![0.0; d];
        for n in 1..=d {
            let nf = n as f64;
            let (a, b) = (self.cos[n], self.sin[n - 1]);
            sin[n - 1] = a / nf;
            cos[n] = -b / nf;
            cos[0] += b / nf;
        }
        (self.cos[0], TrigSeries::new(cos, sin).expect("finite"))
    }

    /// Series `f'`.
    pub fn derivative(&self) -> TrigSeries {
        let d = self.degree();
        let mut cos = vec![0.0; d + 1];
        let mut sin = vec![0.0; d];
        for n in 1..=d {
            let nf = n as f64;
            cos[n] = nf * self.sin[n - 1];
            sin[n - 1] = -nf * self.cos[n];
        }
        TrigSeries::new(cos, sin).expect("finite")
    }
}

/// In-place 2-D DFT of `data` laid out as `i1 + n1 i2`; the inverse is
/// unnormalised.
pub(crate) fn fft2(data: &mut [Complex64], n1: usize, n2: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (p1, p2) = if inverse {
        (planner.plan_fft_inverse(n1), planner.plan_fft_inverse(n2))
    } else {
        (planner.plan_fft_forward(n1), planner.plan_fft_forward(n2))
    };
    for row in data.chunks_mut(n1) {
        p1.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n2];
    for i1 in 0..n1 {
        for (i2, c) in col.iter_mut().enumerate() {
            *c = data[i1 + n1 * i2];
        }
        p2.process(&mut col);
        for (i2, c) in col.iter().enumerate() {
            data[i1 + n1 * i2] = *c;
        }
    }
}

/// Signed wavenumber of DFT index `j` on an `n`-point grid.
pub(crate) fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

pub(crate) fn forward_fft(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// One term `a cos(k.x) + b sin(k.x)` of a [`TorusField`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    pub k: [i32; 2],
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
}

/// Real trigonometric polynomial on the 2-torus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorusField {
    terms: Vec<FieldTerm>,
}

impl TorusField {
    /// Terms are canonicalised to wave vectors whose first nonzero component
    /// is positive; duplicates are merged.
    pub fn new(terms: Vec<FieldTerm>) -> Result<Self> {
        let mut out: Vec<FieldTerm> = Vec::new();
        for t in terms {
            if !t.a.is_finite() || !t.b.is_finite() {
                return Err(invalid("torus_field", "non-finite coefficient"));
            }
            let flip = t.k[0] < 0 || (t.k[0] == 0 && t.k[1] < 0);
            let canon = if flip {
                FieldTerm {
                    k: [-t.k[0], -t.k[1]],
                    a: t.a,
                    b: -t.b,
                }
            } else {
                t
            };
            let canon = if canon.k == [0, 0] {
                FieldTerm { b: 0.0, ..canon }
            } else {
                canon
            };
            match out.iter_mut().find(|o| o.k == canon.k) {
                Some(o) => {
                    o.a += canon.a;
                    o.b += canon.b;
                }
                None => out.push(canon),
            }
        }
        out.sort_by_key(|t| (t.k[0], t.k[1]));
        Ok(TorusField { terms: out })
    }

    pub fn constant(c: f64) -> Self {
        TorusField::new(vec![FieldTerm {
            k: [0, 0],
            a: c,
            b: 0.0,
        }])
        .expect("finite")
    }

    /// `u(x1) + v(x2)`.
    pub fn separable(u: &TrigSeries, v: &TrigSeries) -> Self {
        let mut terms = vec![FieldTerm {
            k: [0, 0],
            a: u.cos_coeffs()[0] + v.cos_coeffs()[0],
            b: 0.0,
        }];
        for (series, axis) in [(u, 0usize), (v, 1usize)] {
            for n in 1..=series.degree() {
                let mut k = [0, 0];
                k[axis] = n as i32;
                terms.push(FieldTerm {
                    k,
                    a: series.cos_coeffs()[n],
                    b: series.sin_coeffs()[n - 1],
                });
            }
        }
        TorusField::new(terms).expect("finite")
    }

    pub fn terms(&self) -> &[FieldTerm] {
        &self.terms
    }

    pub fn mean(&self) -> f64 {
        self.terms.iter().find(|t| t.k == [0, 0]).map_or(0.0, |t| t.a)
    }

    /// The constant value if every non-constant term vanishes.
    pub fn as_constant(&self) -> Option<f64> {
        self.terms
            .iter()
            .all(|t| t.k == [0, 0] || (t.a == 0.0 && t.b == 0.0))
            .then(|| self.mean())
    }

    /// Value and gradient at `x`.
    pub fn eval_grad(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let mut f = 0.0;
        let mut g = [0.0; 2];
        for t in &self.terms {
            let k = [t.k[0] as f64, t.k[1] as f64];
            let phase = k[0] * x[0] + k[1] * x[1];
            let (s, c) = phase.sin_cos();
            f += t.a * c + t.b * s;
            let d = -t.a * s + t.b * c;
            g[0] += k[0] * d;
            g[1] += k[1] * d;
        }
        (f, g)
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.eval_grad(x).0
    }

    fn probe(&self) -> impl Iterator<Item = f64> + '_ {
        let side = 64usize;
        (0..side * side).map(move |i| {
            let x1 = 2.0 * PI * (i % side) as f64 / side as f64;
            let x2 = 2.0 * PI * (i / side) as f64 / side as f64;
            self.eval([x1, x2])
        })
    }

    /// Minimum over the 64x64 probe grid (4096 points).
    pub fn grid_min(&self) -> f64 {
        self.probe().fold(f64::INFINITY, f64::min)
    }

    pub fn grid_max(&self) -> f64 {
        self.probe().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Splits into `c + u(x1) + v(x2)` when no term mixes both angles.
    pub fn separable_parts(&self) -> Option<(f64, TrigSeries, TrigSeries)> {
        let deg = |axis: usize| {
            self.terms
                .iter()
                .map(|t| t.k[axis].unsigned_abs() as usize)
                .max()
                .unwrap_or(0)
        };
        let (d1, d2) = (deg(0), deg(1));
        let mut c1 = vec![0.0; d1 + 1];
        let mut s1 = vec![0.0; d1];
        let mut c2 = vec![0.0; d2 + 1];
        let mut s2 = vec![0.0; d2];
        let mut c0 = 0.0;
        for t in &self.terms {
            match t.k {
                [0, 0] => c0 = t.a,
                [n, 0] => {
                    c1[n as usize] = t.a;
                    s1[n as usize - 1] = t.b;
                }
                [0, n] => {
                    c2[n as usize] = t.a;
                    s2[n as usize - 1] = t.b;
                }
                _ => return None,
            }
        }
        Some((c0, TrigSeries::new(c1, s1).ok()?, TrigSeries::new(c2, s2).ok()?))
    }
}
