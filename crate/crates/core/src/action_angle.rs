//! Separation of Liouville Hamiltonians, action integrals, frequencies,
//! Maslov indices, the isoenergetic nondegeneracy determinant and
//! Diophantine filters.
//!
//! On `{H = E, F = c}` the momenta separate as `p1^2 = E u(x1) + c` and
//! `p2^2 = E v(x2) - c`. Each separated cycle is either rotational
//! (`p_i^2 > 0` on the whole circle) or librational (`p_i^2 > 0` on one arc
//! bounded by two simple turning points).
//!
//! Librational cycles are parametrised by an auxiliary angle `t` through
//! `x = m + r sin t` (`m`, `r` midpoint and half-width of the arc). Writing
//! `p^2 = (x - a)(b - x) rho(x)` with `rho > 0` on `[a, b]`, both
//! `p dx = r^2 cos^2 t sqrt(rho) dt` and `dx / p = dt / sqrt(rho)` are
//! smooth, so every torus integral becomes a periodic or Gauss-Legendre
//! quadrature with spectral accuracy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{HamiltonianModel, Liouville, PhasePoint};
use crate::quadrature::gauss_legendre;
use crate::trig::{TrigSeries, PROBE_POINTS};

/// Gauss-Legendre nodes for librational action integrals.
pub const GL_NODES: usize = 128;
/// Relative base step of the `(E, c)` central differences.
pub const FD_STEP: f64 = 1e-4;
/// Relative step of the action-space differences in [`ikam_det`].
pub const IKAM_STEP: f64 = 1e-2;
/// Minimum `|d p^2 / dx|` at a turning point.
pub const SIMPLE_ZERO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleKind {
    Rotational,
    Librational,
}

impl CycleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CycleKind::Rotational => "rotational",
            CycleKind::Librational => "librational",
        }
    }
}

/// One separated degree of freedom: `p^2 = E w(x) + s c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub kind: CycleKind,
    /// Lifted turning points `a < b` of a librational cycle.
    pub turning: Option<[f64; 2]>,
    /// `p^2` as a function of `x`.
    pub momentum_sq: TrigSeries,
    weight: TrigSeries,
    c_sign: f64,
}

impl Cycle {
    fn new(weight: &TrigSeries, energy: f64, c_sign: f64, sep_const: f64, label: usize) -> Result<Self> {
        let q = weight.scaled(energy).add_constant(c_sign * sep_const);
        let (kind, turning) = classify(&q, label)?;
        Ok(Cycle {
            kind,
            turning,
            momentum_sq: q,
            weight: weight.clone(),
            c_sign,
        })
    }

    /// `p^2 / ((x - a)(b - x))` on a librational arc, with the removable
    /// singularities at the turning points resolved by Taylor expansion.
    fn rho(&self, x: f64) -> f64 {
        let [a, b] = self.turning.expect("librational cycle");
        let len = b - a;
        let (da, db) = (x - a, b - x);
        if da < 1e-6 * len {
            let [_, d1, d2] = self.momentum_sq.eval_derivs(a);
            return (d1 + 0.5 * d2 * da) / (len - da);
        }
        if db < 1e-6 * len {
            let [_, d1, d2] = self.momentum_sq.eval_derivs(b);
            return (-d1 + 0.5 * d2 * db) / (len - db);
        }
        self.momentum_sq.eval(x) / (da * db)
    }

    fn arc(&self) -> (f64, f64) {
        let [a, b] = self.turning.expect("librational cycle");
        (0.5 * (a + b), 0.5 * (b - a))
    }

    /// `J = (1/2pi) oint |p| dx`.
    fn action(&self, gl_nodes: usize) -> f64 {
        match self.kind {
            CycleKind::Rotational => periodic_mean(|x| self.momentum_sq.eval(x).max(0.0).sqrt()),
            CycleKind::Librational => {
                let (m, r) = self.arc();
                let (nodes, weights) = gauss_legendre(gl_nodes);
                let half = 0.5 * PI;
                let s: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(z, w)| {
                        let t = half * z;
                        let c = t.cos();
                        w * c * c * self.rho(m + r * t.sin()).max(0.0).sqrt()
                    })
                    .sum();
                r * r * half * s / PI
            }
        }
    }

    /// Position, momentum (orientation `sign` for rotational cycles) and
    /// `a = dx / p` at auxiliary angle `t`.
    fn aux(&self, t: f64, sign: f64) -> (f64, f64, f64) {
        match self.kind {
            CycleKind::Rotational => {
                let x = sign * t;
                let p = self.momentum_sq.eval(x).max(0.0).sqrt();
                (x, sign * p, 1.0 / p)
            }
            CycleKind::Librational => {
                let (m, r) = self.arc();
                let x = m + r * t.sin();
                let sr = self.rho(x).max(0.0).sqrt();
                (x, r * t.cos() * sr, 1.0 / sr)
            }
        }
    }
}

/// Mean of a smooth periodic function by the trapezoidal rule, doubling
/// from 256 nodes until successive values agree to `1e-15` relative.
fn periodic_mean<F: Fn(f64) -> f64>(f: F) -> f64 {
    let mut n = 256usize;
    let mut sum: f64 = (0..n).map(|i| f(2.0 * PI * i as f64 / n as f64)).sum();
    let mut mean = sum / n as f64;
    while n < 1 << 18 {
        let odd: f64 = (0..n).map(|i| f(2.0 * PI * (i as f64 + 0.5) / n as f64)).sum();
        sum += odd;
        n *= 2;
        let next = sum / n as f64;
        let done = (next - mean).abs() <= 1e-15 * next.abs().max(1e-300);
        mean = next;
        if done {
            break;
        }
    }
    mean
}

fn bisect_sign_change(q: &TrigSeries, mut lo: f64, mut hi: f64) -> f64 {
    let pos_lo = q.eval(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (q.eval(mid) > 0.0) == pos_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..2 {
        let [f, d, _] = q.eval_derivs(z);
        if d != 0.0 {
            let next = z - f / d;
            if (next - z).abs() < (hi - lo).max(1e-15) * 4.0 {
                z = next;
            }
        }
    }
    z
}

fn classify(q: &TrigSeries, label: usize) -> Result<(CycleKind, Option<[f64; 2]>)> {
    let n = PROBE_POINTS;
    let grid: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| q.eval(x)).collect();
    if vals.iter().all(|&v| v <= 0.0) {
        return Err(Error::EmptyTorus(format!("p{}^2 <= 0 on the whole circle", label + 1)));
    }
    if vals.iter().all(|&v| v > 0.0) {
        return Ok((CycleKind::Rotational, None));
    }
    let mut zeros = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        if (vals[i] > 0.0) != (vals[j] > 0.0) {
            let hi = if j == 0 { 2.0 * PI } else { grid[j] };
            zeros.push(bisect_sign_change(q, grid[i], hi));
        }
    }
    for &z in &zeros {
        let d = q.eval_derivs(z)[1];
        if d.abs() < SIMPLE_ZERO {
            return Err(Error::Degenerate(format!(
                "turning point of p{}^2 at {z} is not simple (slope {d:e})",
                label + 1
            )));
        }
    }
    if zeros.len() != 2 {
        return Err(Error::Degenerate(format!(
            "p{}^2 is positive on {} arcs; the torus is not unique",
            label + 1,
            zeros.len() / 2
        )));
    }
    let (z0, z1) = (zeros[0].min(zeros[1]), zeros[0].max(zeros[1]));
    let turning = if q.eval(0.5 * (z0 + z1)) > 0.0 {
        [z0, z1]
    } else {
        [z1, z0 + 2.0 * PI]
    };
    Ok((CycleKind::Librational, Some(turning)))
}

/// Separated momenta on `{H = E, F = c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub energy: f64,
    pub sep_const: f64,
    pub cycles: [Cycle; 2],
}

impl Separation {
    pub fn kinds(&self) -> [CycleKind; 2] {
        [self.cycles[0].kind, self.cycles[1].kind]
    }
}

pub fn separate(model: &Liouville, energy: f64, sep_const: f64) -> Result<Separation> {
    if !energy.is_finite() || !sep_const.is_finite() {
        return Err(invalid("torus", "energy and sep_const must be finite"));
    }
    Ok(Separation {
        energy,
        sep_const,
        cycles: [
            Cycle::new(&model.u, energy, 1.0, sep_const, 0)?,
            Cycle::new(&model.v, energy, -1.0, sep_const, 1)?,
        ],
    })
}

/// The Liouville form of a model whose Hamiltonian is `|p|^2 / (u + v)`.
pub fn liouville_form(model: &HamiltonianModel) -> Result<Liouville> {
    match model {
        HamiltonianModel::Liouville(m) => Ok(m.clone()),
        HamiltonianModel::JacobiMetric(j) => j.to_liouville(),
        other => Err(Error::InvalidModel(format!(
            "{} has no Liouville separation",
            other.name()
        ))),
    }
}

pub fn actions(model: &Liouville, energy: f64, sep_const: f64) -> Result<[f64; 2]> {
    actions_with_nodes(model, energy, sep_const, GL_NODES)
}

/// [`actions`] with an explicit librational node count.
pub fn actions_with_nodes(model: &Liouville, energy: f64, sep_const: f64, gl_nodes: usize) -> Result<[f64; 2]> {
    let s = separate(model, energy, sep_const)?;
    Ok([s.cycles[0].action(gl_nodes), s.cycles[1].action(gl_nodes)])
}

fn actions_if_kinds(model: &Liouville, energy: f64, sep_const: f64, kinds: [CycleKind; 2]) -> Result<Option<[f64; 2]>> {
    let s = match separate(model, energy, sep_const) {
        Ok(s) => s,
        Err(Error::EmptyTorus(_)) | Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if s.kinds() != kinds {
        return Ok(None);
    }
    Ok(Some([s.cycles[0].action(GL_NODES), s.cycles[1].action(GL_NODES)]))
}

/// `d(J1, J2)/d(E, c)` by central differences at steps `s` and `2 s`,
/// Richardson-combined to fourth order; `s` starts at
/// `FD_STEP max(|E|, |c|, 1e-3)` and is halved while the stencil crosses a
/// change of cycle type.
pub fn action_jacobian(model: &Liouville, energy: f64, sep_const: f64) -> Result<[[f64; 2]; 2]> {
    let kinds = separate(model, energy, sep_const)?.kinds();
    let mut s = FD_STEP * energy.abs().max(sep_const.abs()).max(1e-3);
    let central = |s: f64| -> Result<Option<[[f64; 2]; 2]>> {
        let stencil = [
            actions_if_kinds(model, energy + s, sep_const, kinds)?,
            actions_if_kinds(model, energy - s, sep_const, kinds)?,
            actions_if_kinds(model, energy, sep_const + s, kinds)?,
            actions_if_kinds(model, energy, sep_const - s, kinds)?,
        ];
        Ok(match stencil {
            [Some(ep), Some(em), Some(cp), Some(cm)] => {
                let mut m = [[0.0; 2]; 2];
                for i in 0..2 {
                    m[i][0] = (ep[i] - em[i]) / (2.0 * s);
                    m[i][1] = (cp[i] - cm[i]) / (2.0 * s);
                }
                Some(m)
            }
            _ => None,
        })
    };
    for _ in 0..12 {
        if let (Some(fine), Some(coarse)) = (central(s)?, central(2.0 * s)?) {
            let mut m = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
                }
            }
            return Ok(m);
        }
        s *= 0.5;
    }
    Err(Error::ClassificationChange(format!(
        "cycle type changes within {s:e} of (E, c) = ({energy}, {sep_const})"
    )))
}

fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn inverse2(m: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let d = det2(m);
    if !(d.abs() >= 1e-12) {
        return Err(Error::SingularJacobian { det: d });
    }
    Ok([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

/// `w = dH/dJ`: first row of the inverse action Jacobian.
pub fn frequencies(model: &Liouville, energy: f64, sep_const: f64) -> Result<[f64; 2]> {
    let b = inverse2(&action_jacobian(model, energy, sep_const)?)?;
    Ok(b[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusChart {
    pub energy: f64,
    pub sep_const: f64,
    pub actions: [f64; 2],
    pub frequencies: [f64; 2],
    pub kinds: [CycleKind; 2],
    pub turning_points: [Option<[f64; 2]>; 2],
    pub maslov: [u8; 2],
}

pub fn torus_chart(model: &Liouville, energy: f64, sep_const: f64) -> Result<TorusChart> {
    let s = separate(model, energy, sep_const)?;
    let kinds = s.kinds();
    let actions = [s.cycles[0].action(GL_NODES), s.cycles[1].action(GL_NODES)];
    if actions.iter().any(|j| !(*j > 0.0)) {
        return Err(Error::EmptyTorus(format!("actions {actions:?}")));
    }
    let frequencies = frequencies(model, energy, sep_const)?;
    if frequencies.iter().any(|w| !w.is_finite()) {
        return Err(Error::SingularJacobian { det: f64::NAN });
    }
    Ok(TorusChart {
        energy,
        sep_const,
        actions,
        frequencies,
        kinds,
        turning_points: [s.cycles[0].turning, s.cycles[1].turning],
        maslov: kinds.map(maslov_of),
    })
}

fn maslov_of(kind: CycleKind) -> u8 {
    match kind {
        CycleKind::Rotational => 0,
        CycleKind::Librational => 2,
    }
}

/// Turning-point count per separated cycle: 0 rotational, 2 librational.
pub fn maslov_index(chart: &TorusChart) -> [u8; 2] {
    chart.kinds.map(maslov_of)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionInversion {
    pub energy: f64,
    pub sep_const: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton inversion of `(E, c) -> (J1, J2)` from `seed`, keeping the cycle
/// types of the seed torus.
pub fn invert_actions(model: &Liouville, target: [f64; 2], seed: (f64, f64)) -> Result<ActionInversion> {
    let kinds = separate(model, seed.0, seed.1)?.kinds();
    let (mut e, mut c) = seed;
    for it in 0..50 {
        let j = actions_if_kinds(model, e, c, kinds)?
            .ok_or_else(|| Error::ClassificationChange(format!("at (E, c) = ({e}, {c})")))?;
        let r = [j[0] - target[0], j[1] - target[1]];
        let b = action_jacobian(model, e, c)
            .and_then(|m| inverse2(&m))
            .map_err(|err| Error::NoConvergence(format!("iteration {it}: {err}")))?;
        let d = [-(b[0][0] * r[0] + b[0][1] * r[1]), -(b[1][0] * r[0] + b[1][1] * r[1])];
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut flipped = false;
        for _ in 0..30 {
            let (en, cn) = (e + lambda * d[0], c + lambda * d[1]);
            match separate(model, en, cn) {
                Ok(s) if s.kinds() == kinds => {
                    accepted = Some((en, cn));
                    break;
                }
                Ok(_) => flipped = true,
                Err(Error::EmptyTorus(_)) | Err(Error::Degenerate(_)) => {}
                Err(err) => return Err(err),
            }
            lambda *= 0.5;
        }
        let Some((en, cn)) = accepted else {
            if flipped {
                return Err(Error::ClassificationChange(format!(
                    "Newton step from (E, c) = ({e}, {c}) leaves the torus family"
                )));
            }
            return Err(Error::NoConvergence(format!(
                "no admissible Newton step from (E, c) = ({e}, {c})"
            )));
        };
        let step = (en - e).hypot(cn - c);
        e = en;
        c = cn;
        if step <= 1e-12 {
            let j = actions(model, e, c)?;
            let residual = (j[0] - target[0]).abs().max((j[1] - target[1]).abs());
            if residual > 1e-10 {
                return Err(Error::NoConvergence(format!("action residual {residual:e}")));
            }
            return Ok(ActionInversion {
                energy: e,
                sep_const: c,
                residual,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NoConvergence("action inversion exceeded 50 iterations".into()))
}

/// Determinant of `[[dw/dJ, w], [w^T, 0]]`.
pub fn bordered_det(dw: &[[f64; 2]; 2], w: &[f64; 2]) -> f64 {
    -w[0] * w[0] * dw[1][1] + w[0] * w[1] * (dw[0][1] + dw[1][0]) - w[1] * w[1] * dw[0][0]
}

/// Bordered determinant for a frequency map `J -> w(J)` given as a closure,
/// with central differences of steps `steps[j]` and `2 steps[j]` in `J_j`,
/// Richardson-combined to fourth order.
pub fn ikam_det_from<F>(freq: F, actions: [f64; 2], steps: [f64; 2]) -> Result<f64>
where
    F: Fn([f64; 2]) -> Result<[f64; 2]>,
{
    let w = freq(actions)?;
    let mut dw = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut col = [[0.0; 2]; 2];
        for (slot, scale) in [1.0, 2.0].into_iter().enumerate() {
            let mut jp = actions;
            let mut jm = actions;
            jp[j] += scale * steps[j];
            jm[j] -= scale * steps[j];
            let (wp, wm) = (freq(jp)?, freq(jm)?);
            for i in 0..2 {
                col[slot][i] = (wp[i] - wm[i]) / (2.0 * scale * steps[j]);
            }
        }
        for i in 0..2 {
            dw[i][j] = (4.0 * col[0][i] - col[1][i]) / 3.0;
        }
    }
    Ok(bordered_det(&dw, &w))
}

/// IKAM determinant of the torus `(E, c)`; frequencies at the action-space
/// stencil points come from inverting the action map.
pub fn ikam_det(model: &Liouville, energy: f64, sep_const: f64) -> Result<f64> {
    let chart = torus_chart(model, energy, sep_const)?;
    let j0 = chart.actions;
    let freq = |j: [f64; 2]| -> Result<[f64; 2]> {
        if j == j0 {
            return Ok(chart.frequencies);
        }
        let inv = invert_actions(model, j, (energy, sep_const))?;
        frequencies(model, inv.energy, inv.sep_const)
    };
    ikam_det_from(freq, j0, [IKAM_STEP * j0[0], IKAM_STEP * j0[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineParams {
    pub dioph_c: f64,
    pub sigma: f64,
    pub k_max: u32,
}

impl DiophantineParams {
    pub fn new(dioph_c: f64, sigma: f64, k_max: u32) -> Result<Self> {
        let p = DiophantineParams { dioph_c, sigma, k_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dioph_c > 0.0) {
            return Err(invalid("dioph_c", "must be positive"));
        }
        if !(self.sigma > 1.0) {
            return Err(invalid("sigma", "must exceed 1"));
        }
        if self.k_max < 8 {
            return Err(invalid("k_max", "must be at least 8"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KamResult {
    pub pass: bool,
    /// Minimiser of `|<k, w>| |k|_1^sigma`, first nonzero entry positive.
    pub k_star: [i64; 2],
    pub value: f64,
    pub k_max: u32,
}

/// Finite Diophantine test `|<k, w>| >= c |k|_1^(-sigma)` over
/// `0 < |k|_inf <= K_max`. Ties in the weighted divisor go to the smaller
/// `|k|_1`.
pub fn kam_membership(omega: [f64; 2], params: &DiophantineParams) -> KamResult {
    let km = params.k_max as i64;
    let mut best = (f64::INFINITY, i64::MAX, [0i64, 0]);
    for k1 in 0..=km {
        let lo = if k1 == 0 { 1 } else { -km };
        for k2 in lo..=km {
            let norm = k1.abs() + k2.abs();
            let value = (k1 as f64 * omega[0] + k2 as f64 * omega[1]).abs() * (norm as f64).powf(params.sigma);
            if value < best.0 || (value == best.0 && norm < best.1) {
                best = (value, norm, [k1, k2]);
            }
        }
    }
    KamResult {
        pass: best.0 >= params.dioph_c,
        k_star: best.2,
        value: best.0,
        k_max: params.k_max,
    }
}

/// One row of a torus atlas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtlasRow {
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "c")]
    pub sep_const: f64,
    #[serde(rename = "J1")]
    pub j1: f64,
    #[serde(rename = "J2")]
    pub j2: f64,
    pub w1: f64,
    pub w2: f64,
    pub class1: &'static str,
    pub class2: &'static str,
    pub maslov1: u8,
    pub maslov2: u8,
    pub ikam_det: f64,
    pub kam_pass: bool,
}

pub fn atlas_row(model: &Liouville, energy: f64, sep_const: f64, params: &DiophantineParams) -> Result<AtlasRow> {
    let chart = torus_chart(model, energy, sep_const)?;
    let det = ikam_det(model, energy, sep_const)?;
    let kam = kam_membership(chart.frequencies, params);
    Ok(AtlasRow {
        energy,
        sep_const,
        j1: chart.actions[0],
        j2: chart.actions[1],
        w1: chart.frequencies[0],
        w2: chart.frequencies[1],
        class1: chart.kinds[0].as_str(),
        class2: chart.kinds[1].as_str(),
        maslov1: chart.maslov[0],
        maslov2: chart.maslov[1],
        ikam_det: det,
        kam_pass: kam.pass,
    })
}

/// Angle coordinates on one Liouville torus.
///
/// With `a_i = dx_i / p_i` in auxiliary angles `t_i`, the generating
/// function gives `phi = B^T s(t)` where
/// `s = 1/2 (int u a1 dt1 + int v a2 dt2, int a1 dt1 - int a2 dt2)` and
/// `B = (dJ/d(E, c))^{-1}`. Hence `phi = t + B^T P(t)` with `P` periodic
/// and `phi(0) = 0`.
#[derive(Debug, Clone)]
pub struct TorusAngles {
    pub energy: f64,
    pub sep_const: f64,
    pub kinds: [CycleKind; 2],
    signs: [f64; 2],
    cycles: [Cycle; 2],
    /// Periodic parts of `1/2 int w_i a_i` and `1/2 s_i int a_i`.
    prim_w: [TrigSeries; 2],
    prim_a: [TrigSeries; 2],
    /// `dJ/d(E, c)` from exact torus integrals.
    pub action_jacobian: [[f64; 2]; 2],
    b: [[f64; 2]; 2],
}

impl TorusAngles {
    /// `signs` orients rotational cycles (`p_i` sign); ignored for
    /// librational ones.
    pub fn new(model: &Liouville, energy: f64, sep_const: f64, signs: [f64; 2]) -> Result<Self> {
        let sep = separate(model, energy, sep_const)?;
        let signs = signs.map(|s| if s < 0.0 { -1.0 } else { 1.0 });
        let mut prim_w = Vec::new();
        let mut prim_a = Vec::new();
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            let cyc = &sep.cycles[i];
            let a = TrigSeries::from_function(|t| cyc.aux(t, signs[i]).2)?;
            let wa = TrigSeries::from_function(|t| {
                let (x, _, a) = cyc.aux(t, signs[i]);
                cyc.weight.eval(x) * a
            })?;
            let (mw, pw) = wa.scaled(0.5).primitive();
            let (ma, pa) = a.scaled(0.5 * cyc.c_sign).primitive();
            m[i] = [mw, ma];
            prim_w.push(pw);
            prim_a.push(pa);
        }
        let b = inverse2(&m)?;
        let [c0, c1] = sep.cycles;
        Ok(TorusAngles {
            energy,
            sep_const,
            kinds: [c0.kind, c1.kind],
            signs,
            cycles: [c0, c1],
            prim_w: [prim_w[0].clone(), prim_w[1].clone()],
            prim_a: [prim_a[0].clone(), prim_a[1].clone()],
            action_jacobian: m,
            b,
        })
    }

    /// Frequencies from exact torus integrals (first row of `B`).
    pub fn frequencies(&self) -> [f64; 2] {
        self.b[0]
    }

    pub fn phase_point(&self, t: [f64; 2]) -> PhasePoint {
        let (x1, p1, _) = self.cycles[0].aux(t[0], self.signs[0]);
        let (x2, p2, _) = self.cycles[1].aux(t[1], self.signs[1]);
        PhasePoint::new([x1, x2], [p1, p2])
    }

    /// Auxiliary angles of a point on the torus, unwrapped to lie within
    /// `pi` of `prev` when given.
    pub fn aux_angles(&self, pt: &PhasePoint, prev: Option<[f64; 2]>) -> [f64; 2] {
        let mut t = [0.0; 2];
        for i in 0..2 {
            let cyc = &self.cycles[i];
            let raw = match cyc.kind {
                CycleKind::Rotational => self.signs[i] * pt.x[i],
                CycleKind::Librational => {
                    let (m, r) = cyc.arc();
                    let x = pt.x[i] - 2.0 * PI * ((pt.x[i] - m) / (2.0 * PI)).round();
                    let sin = ((x - m) / r).clamp(-1.0, 1.0);
                    let cos = pt.p[i] / (r * cyc.rho(x).max(0.0).sqrt());
                    sin.atan2(cos)
                }
            };
            t[i] = match prev {
                Some(p) => raw + 2.0 * PI * ((p[i] - raw) / (2.0 * PI)).round(),
                None => raw,
            };
        }
        t
    }

    /// Torus angles `phi(t)` (lifted).
    pub fn angles(&self, t: [f64; 2]) -> [f64; 2] {
        let g = [
            self.prim_w[0].eval(t[0]) + self.prim_w[1].eval(t[1]),
            self.prim_a[0].eval(t[0]) + self.prim_a[1].eval(t[1]),
        ];
        [
            t[0] + self.b[0][0] * g[0] + self.b[1][0] * g[1],
            t[1] + self.b[0][1] * g[0] + self.b[1][1] * g[1],
        ]
    }

    /// `d phi / d t`.
    pub fn jacobian(&self, t: [f64; 2]) -> [[f64; 2]; 2] {
        let mut s = [[0.0; 2]; 2];
        for i in 0..2 {
            let cyc = &self.cycles[i];
            let (x, _, a) = cyc.aux(t[i], self.signs[i]);
            s[0][i] = 0.5 * cyc.weight.eval(x) * a;
            s[1][i] = 0.5 * cyc.c_sign * a;
        }
        let b = &self.b;
        let mut j = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] = b[0][r] * s[0][c] + b[1][r] * s[1][c];
            }
        }
        j
    }

    /// Auxiliary angles with `phi(t) = phi` (Newton, lifted).
    pub fn invert(&self, phi: [f64; 2]) -> Result<[f64; 2]> {
        let g = |t: [f64; 2]| {
            let a = self.angles(t);
            [a[0] - phi[0], a[1] - phi[1]]
        };
        // one fixed-point sweep as seed
        let f0 = g(phi);
        let mut t = [phi[0] - f0[0], phi[1] - f0[1]];
        let mut r = g(t);
        for _ in 0..60 {
            let rn = r[0].hypot(r[1]);
            if rn <= 1e-13 {
                return Ok(t);
            }
            let jinv = inverse2(&self.jacobian(t))?;
            let d = [
                jinv[0][0] * r[0] + jinv[0][1] * r[1],
                jinv[1][0] * r[0] + jinv[1][1] * r[1],
            ];
            let mut lambda = 1.0;
            loop {
                let tn = [t[0] - lambda * d[0], t[1] - lambda * d[1]];
                let rnew = g(tn);
                if rnew[0].hypot(rnew[1]) < rn || lambda < 1e-6 {
                    t = tn;
                    r = rnew;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if r[0].hypot(r[1]) <= 1e-11 {
            return Ok(t);
        }
        Err(Error::NoConvergence(format!("angle inversion at phi = {phi:?}")))
    }

    /// Phase points on the uniform `n1 x n2` angle grid, index `i1 + n1 i2`.
    pub fn grid(&self, n1: usize, n2: usize) -> Result<Vec<PhasePoint>> {
        let mut out = Vec::with_capacity(n1 * n2);
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                let phi = [2.0 * PI * i1 as f64 / n1 as f64, 2.0 * PI * i2 as f64 / n2 as f64];
                out.push(self.phase_point(self.invert(phi)?));
            }
        }
        Ok(out)
    }

    /// Torus average of `f` computed on an `n x n` auxiliary grid weighted
    /// by `det(d phi / d t)`, avoiding angle inversion.
    pub fn average<F>(&self, n: usize, f: F) -> Result<f64>
    where
        F: Fn(&PhasePoint) -> Result<f64>,
    {
        let mut acc = 0.0;
        for i2 in 0..n {
            for i1 in 0..n {
                let t = [2.0 * PI * i1 as f64 / n as f64, 2.0 * PI * i2 as f64 / n as f64];
                acc += f(&self.phase_point(t))? * det2(&self.jacobian(t));
            }
        }
        Ok(acc / (n * n) as f64)
    }
}
