//! Concrete 2-D Hamiltonian families and the Maupertuis-Jacobi pairing
//! constructions between them.
//!
//! * Liouville metric `(p1^2 + p2^2) / (u(x1) + v(x2))` with its quadratic
//!   integral `(v p1^2 - u p2^2) / (u + v)`.
//! * Mechanical system `1/2 g^{ij} p_i p_j + V(x)` and its Jacobi metric
//!   `g^{ij} p_i p_j / (2 (E - V))`.
//! * Gravity water-wave dispersion `|p| (1 + mu |p|^2) tanh(D |p|)`.
//! * Katok / Aharonov-Bohm Randers symbol on the sphere,
//!   `sqrt(p2^2 + p1^2 / cos^2 q2) + alpha p1` in equatorial coordinates.

use std::f64::consts::{FRAC_PI_2, PI};

use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trig::{TorusField, TrigSeries};

/// Required gap between a Jacobi level and the potential maximum.
pub const JACOBI_MARGIN: f64 = 1e-6;

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Position and momentum. Positions are torus angles `(x1, x2)`, or
/// equatorial coordinates `(q1, q2)` (longitude, latitude) on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub p: [f64; 2],
}

impl PhasePoint {
    pub fn new(x: [f64; 2], p: [f64; 2]) -> Self {
        PhasePoint { x, p }
    }

    pub fn from_state(y: &[f64; 4]) -> Self {
        PhasePoint {
            x: [y[0], y[1]],
            p: [y[2], y[3]],
        }
    }

    pub fn state(&self) -> [f64; 4] {
        [self.x[0], self.x[1], self.p[0], self.p[1]]
    }

    /// Time-reversal image `(x, -p)`.
    pub fn reversed(&self) -> Self {
        PhasePoint {
            x: self.x,
            p: [-self.p[0], -self.p[1]],
        }
    }
}

/// Partial derivatives of a symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub dx: [f64; 2],
    pub dp: [f64; 2],
}

impl Gradient {
    /// Hamiltonian vector field `(dH/dp, -dH/dx)` in state ordering.
    pub fn vector_field(&self) -> [f64; 4] {
        [self.dp[0], self.dp[1], -self.dx[0], -self.dx[1]]
    }
}

/// Conformal Liouville metric with separated profiles `u(x1)`, `v(x2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Liouville {
    pub u: TrigSeries,
    pub v: TrigSeries,
}

impl Liouville {
    pub fn new(u: TrigSeries, v: TrigSeries) -> Result<Self> {
        let m = Liouville { u, v };
        let min = m.weight_field().grid_min();
        if min <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "Liouville weight u + v must be positive (grid min {min})"
            )));
        }
        Ok(m)
    }

    /// `u + v` as a torus field.
    pub fn weight_field(&self) -> TorusField {
        TorusField::separable(&self.u, &self.v)
    }

    pub fn weight(&self, x: [f64; 2]) -> f64 {
        self.u.eval(x[0]) + self.v.eval(x[1])
    }

    /// Flat metric `u = 1`, `v = 0`.
    pub fn flat() -> Self {
        Liouville::new(TrigSeries::constant(1.0), TrigSeries::constant(0.0)).expect("flat")
    }

    /// Even in both angles, hence symmetric under each reflection `x_i -> -x_i`.
    pub fn is_even(&self) -> bool {
        self.u.is_even() && self.v.is_even()
    }
}

/// Symmetric inverse metric `g^{ij}` with field entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseMetric {
    pub g11: TorusField,
    pub g12: TorusField,
    pub g22: TorusField,
}

impl InverseMetric {
    pub fn identity() -> Self {
        InverseMetric {
            g11: TorusField::constant(1.0),
            g12: TorusField::constant(0.0),
            g22: TorusField::constant(1.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.g11.as_constant() == Some(1.0)
            && self.g12.as_constant() == Some(0.0)
            && self.g22.as_constant() == Some(1.0)
    }

    /// Quadratic form `g^{ij} p_i p_j`, its x-gradient and p-gradient.
    fn quadratic(&self, x: [f64; 2], p: [f64; 2]) -> (f64, [f64; 2], [f64; 2]) {
        let (a, da) = self.g11.eval_grad(x);
        let (b, db) = self.g12.eval_grad(x);
        let (c, dc) = self.g22.eval_grad(x);
        let q = a * p[0] * p[0] + 2.0 * b * p[0] * p[1] + c * p[1] * p[1];
        let dq_dx = [
            da[0] * p[0] * p[0] + 2.0 * db[0] * p[0] * p[1] + dc[0] * p[1] * p[1],
            da[1] * p[0] * p[0] + 2.0 * db[1] * p[0] * p[1] + dc[1] * p[1] * p[1],
        ];
        let dq_dp = [2.0 * (a * p[0] + b * p[1]), 2.0 * (b * p[0] + c * p[1])];
        (q, dq_dx, dq_dp)
    }
}

/// `1/2 g^{ij} p_i p_j + V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanical {
    pub inv_metric: InverseMetric,
    pub potential: TorusField,
}

impl Mechanical {
    pub fn new(inv_metric: InverseMetric, potential: TorusField) -> Result<Self> {
        // positive definiteness on the probe grid
        let det = |x: [f64; 2]| {
            let (a, b, c) = (inv_metric.g11.eval(x), inv_metric.g12.eval(x), inv_metric.g22.eval(x));
            (a, a * c - b * b)
        };
        let side = 64;
        for i in 0..side * side {
            let x = [
                2.0 * PI * (i % side) as f64 / side as f64,
                2.0 * PI * (i / side) as f64 / side as f64,
            ];
            let (a, d) = det(x);
            if a <= 0.0 || d <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "inverse metric not positive definite at {x:?}"
                )));
            }
        }
        Ok(Mechanical { inv_metric, potential })
    }

    /// Flat metric with the given potential.
    pub fn flat(potential: TorusField) -> Self {
        Mechanical {
            inv_metric: InverseMetric::identity(),
            potential,
        }
    }
}

/// Jacobi metric `g^{ij} p_i p_j / (2 (E - V))` of a mechanical system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiMetric {
    pub base: Mechanical,
    pub level: f64,
}

impl JacobiMetric {
    /// Re-expresses the Jacobi metric of a flat mechanical system with
    /// separable potential `V0 + V1(x1) + V2(x2)` as a Liouville metric.
    pub fn to_liouville(&self) -> Result<Liouville> {
        if !self.base.inv_metric.is_identity() {
            return Err(Error::InvalidModel(
                "Liouville form requires the flat inverse metric".into(),
            ));
        }
        let (v0, v1, v2) = self
            .base
            .potential
            .separable_parts()
            .ok_or_else(|| Error::InvalidModel("Liouville form requires a separable potential".into()))?;
        let half = self.level - v0;
        Liouville::new(v1.scaled(-2.0).add_constant(half), v2.scaled(-2.0).add_constant(half))
    }
}

/// Depth profile of a water-wave model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthProfile {
    /// Explicit trigonometric depth field.
    Field { depth: TorusField },
    /// Depth realising a Liouville conformal factor at a fixed energy, see
    /// [`depth_from_radius`].
    FromMetric { metric: Liouville, energy: f64 },
}

/// `|p| (1 + mu(x) |p|^2) tanh(D(x) |p|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterWave {
    pub depth: DepthProfile,
    pub dispersion: TorusField,
}

impl WaterWave {
    pub fn new(depth: TorusField, dispersion: TorusField) -> Result<Self> {
        if depth.grid_min() <= 0.0 {
            return Err(Error::InvalidModel("depth must be positive".into()));
        }
        if dispersion.grid_min() < 0.0 {
            return Err(Error::InvalidModel("dispersion must be nonnegative".into()));
        }
        Ok(WaterWave {
            depth: DepthProfile::Field { depth },
            dispersion,
        })
    }

    /// Water-wave model whose energy surface `{H = energy}` coincides with the
    /// unit cosphere bundle `{(p1^2 + p2^2)/(u + v) = 1}` of `metric`.
    pub fn from_liouville_metric(metric: Liouville, dispersion: TorusField, energy: f64) -> Result<Self> {
        if dispersion.grid_min() < 0.0 {
            return Err(Error::InvalidModel("dispersion must be nonnegative".into()));
        }
        if energy <= 0.0 {
            return Err(invalid("energy", "must be positive"));
        }
        let side = 64;
        for i in 0..side * side {
            let x = [
                2.0 * PI * (i % side) as f64 / side as f64,
                2.0 * PI * (i / side) as f64 / side as f64,
            ];
            let r = metric.weight(x).sqrt();
            depth_from_radius(r, dispersion.eval(x), energy).map_err(|e| match e {
                Error::OutOfRange { reason, .. } => Error::OutOfRange { node: i, reason },
                other => other,
            })?;
        }
        Ok(WaterWave {
            depth: DepthProfile::FromMetric { metric, energy },
            dispersion,
        })
    }

    /// Depth, its gradient, dispersion and its gradient at `x`.
    fn fields(&self, x: [f64; 2]) -> Result<(f64, [f64; 2], f64, [f64; 2])> {
        let (mu, dmu) = self.dispersion.eval_grad(x);
        match &self.depth {
            DepthProfile::Field { depth } => {
                let (d, dd) = depth.eval_grad(x);
                Ok((d, dd, mu, dmu))
            }
            DepthProfile::FromMetric { metric, energy } => {
                let [u, du, _] = metric.u.eval_derivs(x[0]);
                let [v, dv, _] = metric.v.eval_derivs(x[1]);
                let r = (u + v).sqrt();
                let e = *energy;
                let disp = 1.0 + mu * r * r;
                let s = e / (r * disp);
                if !(s > 0.0 && s < 1.0) {
                    return Err(Error::Degenerate(format!("no depth realises the metric at {x:?}")));
                }
                let at = s.atanh();
                let d = at / r;
                let ds_dr = -e * (1.0 + 3.0 * mu * r * r) / (r * disp).powi(2);
                let ds_dmu = -e * r / disp.powi(2);
                let dd_dr = ds_dr / ((1.0 - s * s) * r) - at / (r * r);
                let dd_dmu = ds_dmu / ((1.0 - s * s) * r);
                let dr = [du / (2.0 * r), dv / (2.0 * r)];
                let dd = [dd_dr * dr[0] + dd_dmu * dmu[0], dd_dr * dr[1] + dd_dmu * dmu[1]];
                Ok((d, dd, mu, dmu))
            }
        }
    }

    pub fn depth_at(&self, x: [f64; 2]) -> Result<f64> {
        Ok(self.fields(x)?.0)
    }

    /// Dispersion relation as a function of `r = |p|` at a fixed position.
    fn radial(r: f64, depth: f64, mu: f64) -> f64 {
        r * (1.0 + mu * r * r) * (depth * r).tanh()
    }

    /// Unique `r > 0` with `r (1 + mu r^2) tanh(D r) = energy` at position `x`.
    pub fn radius(&self, x: [f64; 2], energy: f64) -> Result<f64> {
        if energy <= 0.0 {
            return Err(invalid("energy", "must be positive"));
        }
        let (depth, _, mu, _) = self.fields(x)?;
        solve_radius(depth, mu, energy)
    }

    /// Conformal factor `g(x, E) = 1 / r(x, E)^2` on an `n1 x n2` grid
    /// (row-major in `x2`, i.e. index `i1 + n1 * i2`).
    pub fn depth_to_metric(&self, energy: f64, n1: usize, n2: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n1 * n2);
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                let x = [2.0 * PI * i1 as f64 / n1 as f64, 2.0 * PI * i2 as f64 / n2 as f64];
                let r = self.radius(x, energy).map_err(|e| match e {
                    Error::NoConvergence(m) => Error::NoConvergence(format!("grid node {}: {m}", i1 + n1 * i2)),
                    other => other,
                })?;
                out.push(1.0 / (r * r));
            }
        }
        Ok(out)
    }
}

/// Solves `r (1 + mu r^2) tanh(depth r) = energy` by bracketing, bisection to
/// 1e-12 and three Newton polish steps.
pub fn solve_radius(depth: f64, mu: f64, energy: f64) -> Result<f64> {
    if !(depth > 0.0) || mu < 0.0 || !(energy > 0.0) {
        return Err(invalid("radius", format!("depth {depth}, mu {mu}, energy {energy}")));
    }
    let f = |r: f64| WaterWave::radial(r, depth, mu) - energy;
    let mut lo = 0.0;
    let mut hi = energy.max(1.0);
    let mut expansions = 0;
    while f(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::NoConvergence("radius bracket expansion".into()));
        }
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..3 {
        let t = (depth * r).tanh();
        let sech2 = 1.0 - t * t;
        let df = (1.0 + 3.0 * mu * r * r) * t + r * (1.0 + mu * r * r) * depth * sech2;
        if df > 0.0 {
            let next = r - f(r) / df;
            if next > 0.0 {
                r = next;
            }
        }
    }
    Ok(r)
}

/// Depth realising radius `r` (i.e. conformal factor `1/r^2`) at `energy`:
/// `D = artanh(E / (r (1 + mu r^2))) / r`.
pub fn depth_from_radius(r: f64, mu: f64, energy: f64) -> Result<f64> {
    let s = energy / (r * (1.0 + mu * r * r));
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::OutOfRange {
            node: 0,
            reason: format!("artanh argument {s} not in (0, 1)"),
        });
    }
    Ok(s.atanh() / r)
}

/// Depth grid realising a conformal-factor grid `g` at energy `E`.
pub fn metric_to_depth(g: &[f64], mu: &[f64], energy: f64) -> Result<Vec<f64>> {
    if g.len() != mu.len() {
        return Err(invalid("metric_to_depth", "grid length mismatch"));
    }
    g.iter()
        .zip(mu)
        .enumerate()
        .map(|(node, (&gi, &mi))| {
            if !(gi > 0.0) {
                return Err(Error::OutOfRange {
                    node,
                    reason: format!("conformal factor {gi} not positive"),
                });
            }
            depth_from_radius(1.0 / gi.sqrt(), mi, energy).map_err(|e| match e {
                Error::OutOfRange { reason, .. } => Error::OutOfRange { node, reason },
                other => other,
            })
        })
        .collect()
}

/// Randers symbol of the Katok sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KatokRanders {
    pub katok_alpha: f64,
}

impl KatokRanders {
    pub fn new(katok_alpha: f64) -> Result<Self> {
        if !(katok_alpha.abs() < 1.0) {
            return Err(Error::InvalidModel(format!(
                "katok_alpha must lie in (-1, 1), got {katok_alpha}"
            )));
        }
        Ok(KatokRanders { katok_alpha })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HamiltonianModel {
    Liouville(Liouville),
    Mechanical(Mechanical),
    JacobiMetric(JacobiMetric),
    WaterWave(WaterWave),
    KatokRanders(KatokRanders),
}

impl HamiltonianModel {
    pub fn name(&self) -> &'static str {
        match self {
            HamiltonianModel::Liouville(_) => "liouville",
            HamiltonianModel::Mechanical(_) => "mechanical",
            HamiltonianModel::JacobiMetric(_) => "jacobi_metric",
            HamiltonianModel::WaterWave(_) => "water_wave",
            HamiltonianModel::KatokRanders(_) => "katok_randers",
        }
    }

    /// True when positions live on the sphere chart rather than the torus.
    pub fn on_sphere(&self) -> bool {
        matches!(self, HamiltonianModel::KatokRanders(_))
    }

    /// Symbol invariant under `p -> -p`.
    pub fn is_even_in_momentum(&self) -> bool {
        match self {
            HamiltonianModel::KatokRanders(k) => k.katok_alpha == 0.0,
            _ => true,
        }
    }

    pub fn check_chart(&self, pt: &PhasePoint) -> Result<()> {
        if pt.x.iter().chain(pt.p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ChartViolation(format!("non-finite point {pt:?}")));
        }
        if self.on_sphere() && pt.x[1].abs() >= FRAC_PI_2 {
            return Err(Error::ChartViolation(format!(
                "latitude {} outside the equatorial chart",
                pt.x[1]
            )));
        }
        Ok(())
    }

    /// Point with angles reduced to `[0, 2pi)`; the latitude is left alone.
    pub fn wrapped(&self, pt: &PhasePoint) -> PhasePoint {
        let x = if self.on_sphere() {
            [wrap_angle(pt.x[0]), pt.x[1]]
        } else {
            [wrap_angle(pt.x[0]), wrap_angle(pt.x[1])]
        };
        PhasePoint { x, p: pt.p }
    }

    /// Point over `x` with momentum along angle `theta` on `{H = energy}`.
    /// Every family here is increasing in `|p|` along a fixed direction, so
    /// the root is unique once bracketed.
    pub fn on_level(&self, x: [f64; 2], theta: f64, energy: f64) -> Result<PhasePoint> {
        let dir = [theta.cos(), theta.sin()];
        let f = |r: f64| {
            self.eval(&PhasePoint::new(x, [r * dir[0], r * dir[1]]))
                .map(|v| v - energy)
        };
        let f0 = f(0.0)?;
        if !(f0 < 0.0) {
            return Err(invalid(
                "energy",
                format!("{energy} not above H = {} at zero momentum", f0 + energy),
            ));
        }
        let mut hi = 1.0;
        while f(hi)? <= 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::NoConvergence(format!(
                    "no momentum reaches H = {energy} at {x:?}"
                )));
            }
        }
        let mut conv = SimpleConvergency {
            eps: 1e-15,
            max_iter: 200,
        };
        let r = find_root_brent(0.0, hi, |r| f(r).unwrap_or(f64::NAN), &mut conv)
            .map_err(|e| Error::NoConvergence(format!("level search: {e:?}")))?;
        Ok(PhasePoint::new(x, [r * dir[0], r * dir[1]]))
    }

    pub fn eval(&self, pt: &PhasePoint) -> Result<f64> {
        self.check_chart(pt)?;
        let (x, p) = (pt.x, pt.p);
        let p2 = p[0] * p[0] + p[1] * p[1];
        match self {
            HamiltonianModel::Liouville(m) => {
                let w = m.weight(x);
                if w <= 0.0 {
                    return Err(Error::Degenerate(format!("u + v = {w} at {x:?}")));
                }
                Ok(p2 / w)
            }
            HamiltonianModel::Mechanical(m) => {
                let (q, _, _) = m.inv_metric.quadratic(x, p);
                Ok(0.5 * q + m.potential.eval(x))
            }
            HamiltonianModel::JacobiMetric(m) => {
                let (q, _, _) = m.base.inv_metric.quadratic(x, p);
                let gap = m.level - m.base.potential.eval(x);
                if gap <= 0.0 {
                    return Err(Error::Degenerate(format!("E - V = {gap} at {x:?}")));
                }
                Ok(q / (2.0 * gap))
            }
            HamiltonianModel::WaterWave(m) => {
                let (d, _, mu, _) = m.fields(x)?;
                Ok(WaterWave::radial(p2.sqrt(), d, mu))
            }
            HamiltonianModel::KatokRanders(k) => {
                let c = x[1].cos();
                Ok((p[1] * p[1] + p[0] * p[0] / (c * c)).sqrt() + k.katok_alpha * p[0])
            }
        }
    }

    pub fn grad(&self, pt: &PhasePoint) -> Result<Gradient> {
        self.check_chart(pt)?;
        let (x, p) = (pt.x, pt.p);
        match self {
            HamiltonianModel::Liouville(m) => {
                let [u, du, _] = m.u.eval_derivs(x[0]);
                let [v, dv, _] = m.v.eval_derivs(x[1]);
                let w = u + v;
                if w <= 0.0 {
                    return Err(Error::Degenerate(format!("u + v = {w} at {x:?}")));
                }
                let pp = p[0] * p[0] + p[1] * p[1];
                Ok(Gradient {
                    dx: [-pp * du / (w * w), -pp * dv / (w * w)],
                    dp: [2.0 * p[0] / w, 2.0 * p[1] / w],
                })
            }
            HamiltonianModel::Mechanical(m) => {
                let (_, dq_dx, dq_dp) = m.inv_metric.quadratic(x, p);
                let (_, dv) = m.potential.eval_grad(x);
                Ok(Gradient {
                    dx: [0.5 * dq_dx[0] + dv[0], 0.5 * dq_dx[1] + dv[1]],
                    dp: [0.5 * dq_dp[0], 0.5 * dq_dp[1]],
                })
            }
            HamiltonianModel::JacobiMetric(m) => {
                let (q, dq_dx, dq_dp) = m.base.inv_metric.quadratic(x, p);
                let (pot, dv) = m.base.potential.eval_grad(x);
                let gap = m.level - pot;
                if gap <= 0.0 {
                    return Err(Error::Degenerate(format!("E - V = {gap} at {x:?}")));
                }
                let g2 = 2.0 * gap * gap;
                Ok(Gradient {
                    dx: [
                        dq_dx[0] / (2.0 * gap) + q * dv[0] / g2,
                        dq_dx[1] / (2.0 * gap) + q * dv[1] / g2,
                    ],
                    dp: [dq_dp[0] / (2.0 * gap), dq_dp[1] / (2.0 * gap)],
                })
            }
            HamiltonianModel::WaterWave(m) => {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if r == 0.0 {
                    return Err(Error::Degenerate("water-wave symbol at p = 0".into()));
                }
                let (d, dd, mu, dmu) = m.fields(x)?;
                let t = (d * r).tanh();
                let sech2 = 1.0 - t * t;
                let disp = 1.0 + mu * r * r;
                let dh_dr = (1.0 + 3.0 * mu * r * r) * t + r * disp * d * sech2;
                let dh_dd = r * disp * r * sech2;
                let dh_dmu = r * r * r * t;
                Ok(Gradient {
                    dx: [dh_dd * dd[0] + dh_dmu * dmu[0], dh_dd * dd[1] + dh_dmu * dmu[1]],
                    dp: [dh_dr * p[0] / r, dh_dr * p[1] / r],
                })
            }
            HamiltonianModel::KatokRanders(k) => {
                let (s, c) = x[1].sin_cos();
                let root = (p[1] * p[1] + p[0] * p[0] / (c * c)).sqrt();
                if root == 0.0 {
                    return Err(Error::Degenerate("Randers symbol at p = 0".into()));
                }
                Ok(Gradient {
                    dx: [0.0, p[0] * p[0] * s / (c * c * c * root)],
                    dp: [p[0] / (c * c * root) + k.katok_alpha, p[1] / root],
                })
            }
        }
    }

    /// `X_H = (dH/dp, -dH/dx)`.
    pub fn vector_field(&self, pt: &PhasePoint) -> Result<[f64; 4]> {
        Ok(self.grad(pt)?.vector_field())
    }

    /// Quadratic second integral of a Liouville metric.
    pub fn liouville_integral(&self, pt: &PhasePoint) -> Result<f64> {
        match self {
            HamiltonianModel::Liouville(m) => liouville_integral(m, pt),
            _ => Err(invalid("model", "second integral defined only for Liouville metrics")),
        }
    }
}

/// Config-file form of a model; `variant` selects the family.
///
/// ```toml
/// [model]
/// variant = "liouville"
/// u = { cos = [1.0, 0.3] }
/// v = { cos = [0.0], sin = [0.2] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Liouville {
        u: TrigSeries,
        v: TrigSeries,
    },
    Mechanical {
        #[serde(default)]
        inv_metric: Option<InverseMetric>,
        potential: TorusField,
    },
    JacobiMetric {
        #[serde(default)]
        inv_metric: Option<InverseMetric>,
        potential: TorusField,
        level: f64,
    },
    WaterWave {
        depth: TorusField,
        #[serde(default)]
        dispersion: Option<TorusField>,
    },
    /// Water waves over the depth that realises a Liouville metric at `energy`.
    WaterWaveFromMetric {
        u: TrigSeries,
        v: TrigSeries,
        #[serde(default)]
        dispersion: Option<TorusField>,
        energy: f64,
    },
    KatokRanders {
        katok_alpha: f64,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<HamiltonianModel> {
        let mechanical = |g: &Option<InverseMetric>, v: &TorusField| {
            Mechanical::new(g.clone().unwrap_or_else(InverseMetric::identity), v.clone())
        };
        let disp = |d: &Option<TorusField>| d.clone().unwrap_or_else(|| TorusField::constant(0.0));
        Ok(match self {
            ModelSpec::Liouville { u, v } => HamiltonianModel::Liouville(Liouville::new(u.clone(), v.clone())?),
            ModelSpec::Mechanical { inv_metric, potential } => {
                HamiltonianModel::Mechanical(mechanical(inv_metric, potential)?)
            }
            ModelSpec::JacobiMetric {
                inv_metric,
                potential,
                level,
            } => HamiltonianModel::JacobiMetric(jacobi_from_mechanical(&mechanical(inv_metric, potential)?, *level)?),
            ModelSpec::WaterWave { depth, dispersion } => {
                HamiltonianModel::WaterWave(WaterWave::new(depth.clone(), disp(dispersion))?)
            }
            ModelSpec::WaterWaveFromMetric {
                u,
                v,
                dispersion,
                energy,
            } => HamiltonianModel::WaterWave(WaterWave::from_liouville_metric(
                Liouville::new(u.clone(), v.clone())?,
                disp(dispersion),
                *energy,
            )?),
            ModelSpec::KatokRanders { katok_alpha } => HamiltonianModel::KatokRanders(KatokRanders::new(*katok_alpha)?),
        })
    }
}

/// `(v p1^2 - u p2^2) / (u + v)`.
pub fn liouville_integral(m: &Liouville, pt: &PhasePoint) -> Result<f64> {
    let u = m.u.eval(pt.x[0]);
    let v = m.v.eval(pt.x[1]);
    let w = u + v;
    if w <= 0.0 {
        return Err(Error::Degenerate(format!("u + v = {w} at {:?}", pt.x)));
    }
    Ok((v * pt.p[0] * pt.p[0] - u * pt.p[1] * pt.p[1]) / w)
}

/// Pairs a mechanical system with its Jacobi metric at level `energy`; the
/// pair shares the energy surface `{H = energy} = {K = 1}`.
pub fn jacobi_from_mechanical(base: &Mechanical, energy: f64) -> Result<JacobiMetric> {
    let max_potential = base.potential.grid_max();
    if !(energy > max_potential + JACOBI_MARGIN) {
        return Err(Error::EnergyTooLow { energy, max_potential });
    }
    Ok(JacobiMetric {
        base: base.clone(),
        level: energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_point_has_the_requested_energy() {
        let v = TorusField::new(vec![crate::trig::FieldTerm {
            k: [1, 0],
            a: 0.3,
            b: 0.0,
        }])
        .unwrap();
        let models = [
            HamiltonianModel::Mechanical(Mechanical::flat(v)),
            HamiltonianModel::KatokRanders(KatokRanders::new(0.5).unwrap()),
        ];
        for m in &models {
            let pt = m.on_level([0.4, 0.3], 2.0, 1.0).unwrap();
            assert!((m.eval(&pt).unwrap() - 1.0).abs() <= 1e-12);
            assert!((pt.p[0] * 2f64.sin() - pt.p[1] * 2f64.cos()).abs() <= 1e-15);
        }
        assert!(models[0].on_level([0.0, 0.0], 0.0, 0.2).is_err());
    }
    use crate::trig::FieldTerm;

    fn pt(x: [f64; 2], p: [f64; 2]) -> PhasePoint {
        PhasePoint::new(x, p)
    }

    #[test]
    fn flat_liouville_is_euclidean() {
        let m = HamiltonianModel::Liouville(Liouville::flat());
        let z = pt([0.0, 0.0], [0.6, 0.8]);
        assert!((m.eval(&z).unwrap() - 1.0).abs() < 1e-15);
        let g = m.grad(&z).unwrap();
        assert_eq!(g.dx, [0.0, 0.0]);
        assert!((g.dp[0] - 1.2).abs() < 1e-15 && (g.dp[1] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn katok_on_equator() {
        let m = HamiltonianModel::KatokRanders(KatokRanders::new(0.5).unwrap());
        let z = pt([0.0, 0.0], [1.0 / 1.5, 0.0]);
        assert!((m.eval(&z).unwrap() - 1.0).abs() < 1e-15);
        for p1 in [-2.0, -0.3, 0.4, 1.7] {
            let v = m.eval(&pt([1.0, 0.0], [p1, 0.0])).unwrap();
            assert_eq!(v, p1.abs() + 0.5 * p1);
        }
        assert!(matches!(
            m.eval(&pt([0.0, 1.6], [1.0, 0.0])),
            Err(Error::ChartViolation(_))
        ));
        assert!(KatokRanders::new(1.0).is_err());
    }

    #[test]
    fn mechanical_potential_gradient() {
        let v = TorusField::new(vec![FieldTerm {
            k: [1, 0],
            a: 0.3,
            b: 0.0,
        }])
        .unwrap();
        let m = HamiltonianModel::Mechanical(Mechanical::flat(v));
        let g = m.grad(&pt([PI / 2.0, 0.0], [0.0, 0.0])).unwrap();
        assert!((g.dx[0] + 0.3).abs() < 1e-15);
        assert_eq!(g.dx[1], 0.0);
    }

    #[test]
    fn liouville_integral_values() {
        let flat = Liouville::flat();
        let f = liouville_integral(&flat, &pt([0.0, 0.0], [0.6, 0.8])).unwrap();
        assert!((f + 0.64).abs() < 1e-15);
        let m = Liouville::new(TrigSeries::constant(1.0), TrigSeries::constant(1.0)).unwrap();
        let f = liouville_integral(&m, &pt([0.0, 0.0], [1.0, 0.0])).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn liouville_requires_positive_weight() {
        let r = Liouville::new(TrigSeries::cosine(0.1, 0.3), TrigSeries::constant(0.0));
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn water_wave_eval_and_radius() {
        let w = WaterWave::new(TorusField::constant(0.7), TorusField::constant(0.0)).unwrap();
        let m = HamiltonianModel::WaterWave(w.clone());
        let h = m.eval(&pt([0.0, 0.0], [1.2, 0.0])).unwrap();
        assert!((h - 1.2 * (0.84f64).tanh()).abs() < 1e-15);
        let r = w.radius([0.3, 0.2], h).unwrap();
        assert!((r - 1.2).abs() < 1e-11);
        let deep = WaterWave::new(TorusField::constant(1e3), TorusField::constant(0.0)).unwrap();
        assert!((deep.radius([0.0, 0.0], 0.75).unwrap() - 0.75).abs() < 1e-12);
        assert!(deep.radius([0.0, 0.0], -1.0).is_err());
        assert!(matches!(m.grad(&pt([0.0, 0.0], [0.0, 0.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn depth_metric_identities() {
        let deep = WaterWave::new(TorusField::constant(1e4), TorusField::constant(0.0)).unwrap();
        let g = deep.depth_to_metric(2.0, 4, 4).unwrap();
        assert!(g.iter().all(|gi| (gi - 0.25).abs() < 1e-12));
        let d = depth_from_radius(1.0, 0.0, 0.5).unwrap();
        assert!((d - 0.5f64.atanh()).abs() < 1e-15);
        assert!(matches!(
            depth_from_radius(1.0, 0.0, 1.0),
            Err(Error::OutOfRange { .. })
        ));
        let err = metric_to_depth(&[1.0, 4.0], &[0.0, 0.0], 0.9).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { node: 1, .. }));
    }

    #[test]
    fn jacobi_pairing_preconditions() {
        let v = TorusField::new(vec![
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
        .unwrap();
        let base = Mechanical::flat(v);
        assert!(jacobi_from_mechanical(&base, 1.0).is_ok());
        assert!(matches!(
            jacobi_from_mechanical(&base, 0.4),
            Err(Error::EnergyTooLow { .. })
        ));
        let free = Mechanical::flat(TorusField::constant(0.0));
        let j = HamiltonianModel::JacobiMetric(jacobi_from_mechanical(&free, 1.0).unwrap());
        let z = pt([0.4, 1.0], [0.3, -0.7]);
        assert!((j.eval(&z).unwrap() - 0.5 * (0.09 + 0.49)).abs() < 1e-15);
    }

    #[test]
    fn jacobi_liouville_form_agrees() {
        let v = TorusField::new(vec![
            FieldTerm {
                k: [0, 0],
                a: 0.05,
                b: 0.0,
            },
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
        .unwrap();
        let jm = jacobi_from_mechanical(&Mechanical::flat(v), 1.0).unwrap();
        let l = HamiltonianModel::Liouville(jm.to_liouville().unwrap());
        let j = HamiltonianModel::JacobiMetric(jm);
        let z = pt([0.4, 2.0], [0.3, -0.7]);
        assert!((j.eval(&z).unwrap() - l.eval(&z).unwrap()).abs() < 1e-14);
    }
}
