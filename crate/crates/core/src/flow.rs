//! Hamiltonian flows: trajectories, Poincare sections, rotation numbers and
//! linearised return maps.
//!
//! States are integrated in lifted (unwrapped) coordinates so that winding
//! numbers survive; wrap with [`HamiltonianModel::wrapped`] for display.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{HamiltonianModel, PhasePoint};
use crate::ode::{self, DenseStep, Options};

/// Latitude beyond which sphere integrations abort (pole guard).
pub const POLE_GUARD: f64 = FRAC_PI_2 - 0.05;
/// Minimum transverse velocity accepted at a section crossing.
pub const MIN_TRANSVERSE_VELOCITY: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub pt: PhasePoint,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    /// `max |H - H0| / max(|H0|, 1)` over the stored samples.
    pub max_energy_drift: f64,
    /// `100 tol max(T, 1)`.
    pub drift_budget: f64,
}

/// Samples of one integral curve at every accepted integrator step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn energy0(&self) -> f64 {
        self.samples[0].energy
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn within_budget(&self) -> bool {
        self.stats.max_energy_drift <= self.stats.drift_budget
    }

    /// CSV with columns `t, x1, x2, p1, p2, H` (positions lifted).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x1,x2,p1,p2,H")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                s.t, s.pt.x[0], s.pt.x[1], s.pt.p[0], s.pt.p[1], s.energy
            )?;
        }
        Ok(())
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(invalid("tol", format!("{tol} outside [1e-13, 1e-6]")));
    }
    Ok(())
}

/// Right-hand side of Hamilton's equations with the sphere pole guard.
pub(crate) fn hamilton_rhs(model: &HamiltonianModel, y: &[f64; 4]) -> Result<[f64; 4]> {
    if model.on_sphere() && y[1].abs() > POLE_GUARD {
        return Err(Error::ChartViolation(format!(
            "orbit reached latitude {} (pole guard {POLE_GUARD})",
            y[1]
        )));
    }
    model.vector_field(&PhasePoint::from_state(y))
}

/// Runs the flow of `model` and feeds every accepted step to `observer`.
pub(crate) fn run_flow<O>(
    model: &HamiltonianModel,
    pt0: &PhasePoint,
    t_end: f64,
    tol: f64,
    observer: O,
) -> Result<ode::Stats>
where
    O: FnMut(&DenseStep<4>) -> Result<ControlFlow<()>>,
{
    model.check_chart(pt0)?;
    ode::integrate(
        |_, y| hamilton_rhs(model, y),
        0.0,
        pt0.state(),
        t_end,
        &Options::with_tol(tol),
        observer,
    )
}

/// Adaptive RK5(4) trajectory of `X_H` over `[0, t_end]`, sampled at every
/// accepted step.
pub fn integrate(model: &HamiltonianModel, pt0: &PhasePoint, t_end: f64, tol: f64) -> Result<Trajectory> {
    integrate_sampled(model, pt0, t_end, tol, f64::INFINITY)
}

/// As [`integrate`], with extra samples from the dense output so that
/// consecutive samples are at most `max_dt` apart in time.
pub fn integrate_sampled(
    model: &HamiltonianModel,
    pt0: &PhasePoint,
    t_end: f64,
    tol: f64,
    max_dt: f64,
) -> Result<Trajectory> {
    check_tol(tol)?;
    if !(max_dt > 0.0) {
        return Err(invalid("max_dt", "must be positive"));
    }
    let e0 = model.eval(pt0)?;
    let mut samples = vec![Sample {
        t: 0.0,
        pt: *pt0,
        energy: e0,
    }];
    let mut drift: f64 = 0.0;
    let scale = e0.abs().max(1.0);
    let stats = run_flow(model, pt0, t_end, tol, |step| {
        let pieces = (step.h.abs() / max_dt).ceil().max(1.0) as usize;
        for j in 1..=pieces {
            let (t, y) = if j == pieces {
                (step.t1(), step.y1)
            } else {
                let theta = j as f64 / pieces as f64;
                (step.t0 + theta * step.h, step.at_fraction(theta))
            };
            let pt = PhasePoint::from_state(&y);
            let energy = model.eval(&pt)?;
            drift = drift.max((energy - e0).abs() / scale);
            samples.push(Sample { t, pt, energy });
        }
        Ok(ControlFlow::Continue(()))
    })?;
    let budget = 100.0 * tol * t_end.abs().max(1.0);
    if drift > budget {
        return Err(Error::NoConvergence(format!(
            "energy drift {drift:e} exceeds budget {budget:e}"
        )));
    }
    Ok(Trajectory {
        samples,
        stats: IntegratorStats {
            steps: stats.steps,
            rejected: stats.rejected,
            max_energy_drift: drift,
            drift_budget: budget,
        },
    })
}

/// Integrates `X_H` together with the scalar quadrature `s' = weight(pt)`;
/// returns the final state and the accumulated integral.
pub fn integrate_with_quadrature<W>(
    model: &HamiltonianModel,
    pt0: &PhasePoint,
    t_end: f64,
    tol: f64,
    weight: W,
) -> Result<(PhasePoint, f64)>
where
    W: Fn(&PhasePoint) -> Result<f64>,
{
    check_tol(tol)?;
    model.check_chart(pt0)?;
    let y0 = [pt0.x[0], pt0.x[1], pt0.p[0], pt0.p[1], 0.0];
    let mut last = y0;
    ode::integrate(
        |_, y: &[f64; 5]| {
            let s = [y[0], y[1], y[2], y[3]];
            let v = hamilton_rhs(model, &s)?;
            Ok([v[0], v[1], v[2], v[3], weight(&PhasePoint::from_state(&s))?])
        },
        0.0,
        y0,
        t_end,
        &Options::with_tol(tol),
        |step| {
            last = step.y1;
            Ok(ControlFlow::Continue(()))
        },
    )?;
    Ok((PhasePoint::from_state(&[last[0], last[1], last[2], last[3]]), last[4]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Position,
    Phase,
}

fn point_segment_dist(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let ab = b[i] - a[i];
        ab2 += ab * ab;
        ap_ab += (p[i] - a[i]) * ab;
    }
    let t = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut d2 = 0.0;
    for i in 0..p.len() {
        let q = a[i] + t * (b[i] - a[i]);
        d2 += (p[i] - q).powi(2);
    }
    d2.sqrt()
}

fn project(t: &Trajectory, proj: Projection) -> Vec<Vec<f64>> {
    t.samples
        .iter()
        .map(|s| match proj {
            Projection::Position => vec![s.pt.x[0], s.pt.x[1]],
            Projection::Phase => s.pt.state().to_vec(),
        })
        .collect()
}

/// Segments of a polyline bucketed on a uniform grid in the first two
/// coordinates. Distances in those coordinates bound the full distance from
/// below, so ring-by-ring search is exact.
struct SegmentGrid<'a> {
    pts: &'a [Vec<f64>],
    cell: f64,
    origin: [f64; 2],
    dims: [i64; 2],
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> SegmentGrid<'a> {
    fn new(pts: &'a [Vec<f64>]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut length = 0.0;
        for (i, p) in pts.iter().enumerate() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
            if i > 0 {
                length += (p[0] - pts[i - 1][0]).hypot(p[1] - pts[i - 1][1]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let segs = pts.len().saturating_sub(1).max(1) as f64;
        let cell = (4.0 * length / segs).max(extent / 4096.0).max(1e-12);
        let mut grid = SegmentGrid {
            pts,
            cell,
            origin: lo,
            dims: [0, 0],
            buckets: HashMap::new(),
        };
        grid.dims = [grid.index(hi[0], 0) + 1, grid.index(hi[1], 1) + 1];
        let n = pts.len();
        for s in 0..n.saturating_sub(1).max(1).min(n) {
            let (a, b) = (&pts[s], &pts[(s + 1).min(n - 1)]);
            for i in grid.index(a[0].min(b[0]), 0)..=grid.index(a[0].max(b[0]), 0) {
                for j in grid.index(a[1].min(b[1]), 1)..=grid.index(a[1].max(b[1]), 1) {
                    grid.buckets.entry((i, j)).or_default().push(s);
                }
            }
        }
        grid
    }

    fn index(&self, v: f64, d: usize) -> i64 {
        ((v - self.origin[d]) / self.cell).floor() as i64
    }

    fn nearest(&self, p: &[f64]) -> f64 {
        let n = self.pts.len();
        let c = [self.index(p[0], 0), self.index(p[1], 1)];
        let max_ring = (c[0].abs() + c[1].abs() + self.dims[0] + self.dims[1]).max(1);
        let mut best = f64::INFINITY;
        for r in 0..=max_ring {
            for i in c[0] - r..=c[0] + r {
                for j in c[1] - r..=c[1] + r {
                    if (i - c[0]).abs() != r && (j - c[1]).abs() != r {
                        continue;
                    }
                    if let Some(segs) = self.buckets.get(&(i, j)) {
                        for &s in segs {
                            let d = point_segment_dist(p, &self.pts[s], &self.pts[(s + 1).min(n - 1)]);
                            best = best.min(d);
                        }
                    }
                }
            }
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }
}

fn directed_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let grid = SegmentGrid::new(b);
    a.iter().map(|p| grid.nearest(p)).fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between the polylines through the samples
/// of `a` and `b` (lifted coordinates).
pub fn orbit_distance(a: &Trajectory, b: &Trajectory, projection: Projection) -> Result<f64> {
    if a.samples.is_empty() || b.samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let pa = project(a, projection);
    let pb = project(b, projection);
    Ok(directed_hausdorff(&pa, &pb).max(directed_hausdorff(&pb, &pa)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Either,
}

/// Section `y[coord] = level` (modulo `2 pi` when `periodic`), crossed in
/// the given direction. `coord` indexes the state `(x1, x2, p1, p2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub coord: usize,
    pub level: f64,
    pub direction: Direction,
    pub periodic: bool,
}

impl SectionSpec {
    /// Section on the angle `x_index` (0 or 1).
    pub fn angle(index: usize, level: f64, direction: Direction) -> Self {
        SectionSpec {
            coord: index,
            level,
            direction,
            periodic: true,
        }
    }

    /// Index pair `(position, momentum)` of the in-section coordinates.
    pub fn in_section_indices(&self) -> (usize, usize) {
        match self.coord {
            0 => (1, 3),
            1 => (0, 2),
            2 => (1, 3),
            _ => (0, 2),
        }
    }

    /// Signed distance to the section, reduced to `(-pi, pi]` when periodic.
    pub fn residual(&self, y: &[f64; 4]) -> f64 {
        let d = y[self.coord] - self.level;
        if self.periodic {
            let r = d.rem_euclid(2.0 * PI);
            if r > PI {
                r - 2.0 * PI
            } else {
                r
            }
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionPoint {
    pub time: f64,
    pub pt: PhasePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionMap {
    pub spec: SectionSpec,
    pub returns: Vec<SectionPoint>,
}

impl SectionMap {
    /// In-section coordinates `(q, p)` of every return.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        let (qi, pi) = self.spec.in_section_indices();
        self.returns
            .iter()
            .map(|r| {
                let s = r.pt.state();
                [s[qi], s[pi]]
            })
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.returns.iter().map(|r| r.time).collect()
    }

    /// CSV with columns `index, q, p, time`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,q,p,time")?;
        for (i, (c, r)) in self.coords().iter().zip(&self.returns).enumerate() {
            writeln!(w, "{i},{:.17e},{:.17e},{:.17e}", c[0], c[1], r.time)?;
        }
        Ok(())
    }
}

/// Crossings of the section inside one dense step, located on the
/// continuous extension by safeguarded secant iteration.
fn crossings_in_step(spec: &SectionSpec, step: &DenseStep<4>, skip_start: bool) -> Vec<(f64, [f64; 4])> {
    let c = spec.coord;
    let scale = if spec.periodic { 2.0 * PI } else { 1.0 };
    let a = (step.y0[c] - spec.level) / scale;
    let b = (step.y1[c] - spec.level) / scale;
    let targets: Vec<f64> = if spec.periodic {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut out = Vec::new();
        let mut n = lo.floor() + 1.0;
        if lo == lo.floor() && !(skip_start && lo == a) {
            n = lo;
        }
        while n <= hi {
            out.push(n);
            n += 1.0;
        }
        if b < a {
            out.reverse();
        }
        out
    } else if (a <= 0.0 && b > 0.0) || (a >= 0.0 && b < 0.0) {
        if a == 0.0 && skip_start {
            Vec::new()
        } else {
            vec![0.0]
        }
    } else {
        Vec::new()
    };
    let mut found = Vec::new();
    for n in targets {
        let target = spec.level + n * scale;
        let g = |th: f64| step.at_fraction(th)[c] - target;
        let (mut lo, mut hi) = (0.0, 1.0);
        let (mut glo, mut ghi) = (g(lo), g(hi));
        if glo == 0.0 {
            if skip_start {
                continue;
            }
            found.push((step.t0, step.y0));
            continue;
        }
        if glo.signum() == ghi.signum() {
            continue;
        }
        let mut th = 0.5;
        for _ in 0..100 {
            // Illinois-style regula falsi with bisection fallback
            let sec = lo - glo * (hi - lo) / (ghi - glo);
            th = if sec > lo && sec < hi { sec } else { 0.5 * (lo + hi) };
            let gt = g(th);
            if gt == 0.0 || (hi - lo) < 1e-15 {
                break;
            }
            if gt.signum() == glo.signum() {
                lo = th;
                glo = gt;
                ghi *= 0.5;
            } else {
                hi = th;
                ghi = gt;
                glo *= 0.5;
            }
            if gt.abs() < 1e-15 * scale.max(target.abs()) {
                break;
            }
        }
        let mut y = step.at_fraction(th);
        y[c] = target;
        let t = step.t0 + th * step.h;
        if skip_start && t == step.t0 {
            continue;
        }
        found.push((t, y));
    }
    found
}

/// First `n_returns` crossings of the section after `t = 0`.
pub fn poincare(
    model: &HamiltonianModel,
    spec: &SectionSpec,
    pt0: &PhasePoint,
    n_returns: usize,
    tol: f64,
    max_time: f64,
) -> Result<SectionMap> {
    check_tol(tol)?;
    if spec.coord > 3 {
        return Err(invalid("section.coord", "must index (x1, x2, p1, p2)"));
    }
    let mut returns = Vec::with_capacity(n_returns);
    let mut failure: Option<Error> = None;
    let mut first = true;
    run_flow(model, pt0, max_time, tol, |step| {
        let skip = first;
        first = false;
        for (t, y) in crossings_in_step(spec, step, skip) {
            let v = match hamilton_rhs(model, &y) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    return Ok(ControlFlow::Break(()));
                }
            };
            let vel = v[spec.coord];
            let ok = match spec.direction {
                Direction::Up => vel > 0.0,
                Direction::Down => vel < 0.0,
                Direction::Either => true,
            };
            if !ok {
                continue;
            }
            if vel.abs() < MIN_TRANSVERSE_VELOCITY {
                failure = Some(Error::Tangency { velocity: vel });
                return Ok(ControlFlow::Break(()));
            }
            returns.push(SectionPoint {
                time: t,
                pt: PhasePoint::from_state(&y),
            });
            if returns.len() == n_returns {
                return Ok(ControlFlow::Break(()));
            }
        }
        Ok(ControlFlow::Continue(()))
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if returns.len() < n_returns {
        return Err(Error::NoCrossing { budget: max_time });
    }
    Ok(SectionMap { spec: *spec, returns })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationEstimate {
    /// Mean advance per iterate, in turns.
    pub rho: f64,
    pub stderr: f64,
}

/// Least-squares slope of `ys` against `xs` with its standard error.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    (slope, stderr)
}

/// Rotation number (turns per iterate) of a sequence of angles, lifting
/// each increment into `[0, 2 pi)`.
pub fn rotation_number(angles: &[f64]) -> Result<RotationEstimate> {
    if angles.len() < 100 {
        return Err(Error::TooFewSamples {
            needed: 100,
            got: angles.len(),
        });
    }
    let mut lifted = Vec::with_capacity(angles.len());
    let mut acc = 0.0;
    lifted.push(0.0);
    for w in angles.windows(2) {
        acc += (w[1] - w[0]).rem_euclid(2.0 * PI) / (2.0 * PI);
        lifted.push(acc);
    }
    let idx: Vec<f64> = (0..lifted.len()).map(|i| i as f64).collect();
    let (rho, stderr) = least_squares_slope(&idx, &lifted);
    Ok(RotationEstimate { rho, stderr })
}

/// Linearisation of a section return map about a periodic orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnMapLinearization {
    /// Fixed point in in-section coordinates.
    pub fixed_point: [f64; 2],
    pub period: f64,
    pub matrix: [[f64; 2]; 2],
    pub det: f64,
    pub trace: f64,
    /// Eigenvalue moduli (equal for an elliptic pair).
    pub eig_moduli: [f64; 2],
    /// Unsigned eigenvalue phase in `[0, pi]`; zero for real eigenvalues.
    pub eig_phase: f64,
    /// Rotation angle in `[0, 2 pi)`, oriented like the flow of
    /// `(q^2 + p^2)/2` (clockwise in the `(q, p)` plane).
    pub rotation_angle: f64,
}

struct ReturnMap<'a> {
    model: &'a HamiltonianModel,
    spec: SectionSpec,
    energy: f64,
    seed: PhasePoint,
    tol: f64,
    max_time: f64,
}

impl ReturnMap<'_> {
    /// Phase point on the section and energy surface with in-section
    /// coordinates `z`; the momentum conjugate to the section coordinate is
    /// solved by Newton from the seed value.
    fn lift(&self, z: [f64; 2]) -> Result<PhasePoint> {
        let (qi, pi) = self.spec.in_section_indices();
        let mut y = self.seed.state();
        y[qi] = z[0];
        y[pi] = z[1];
        if self.spec.coord >= 2 {
            return Err(invalid("section.coord", "return maps need a position section"));
        }
        let free = self.spec.coord + 2;
        for _ in 0..50 {
            let pt = PhasePoint::from_state(&y);
            let h = self.model.eval(&pt)? - self.energy;
            if h.abs() < 1e-15 * self.energy.abs().max(1.0) {
                return Ok(pt);
            }
            let g = self.model.grad(&pt)?;
            let d = g.dp[self.spec.coord];
            if d.abs() < 1e-14 {
                return Err(Error::IllConditioned("section momentum not solvable".into()));
            }
            let step = h / d;
            y[free] -= step;
            if step.abs() < 1e-16 * y[free].abs().max(1.0) {
                return Ok(PhasePoint::from_state(&y));
            }
        }
        let pt = PhasePoint::from_state(&y);
        if (self.model.eval(&pt)? - self.energy).abs() < 1e-12 {
            Ok(pt)
        } else {
            Err(Error::IllConditioned("energy lift did not converge".into()))
        }
    }

    fn apply(&self, z: [f64; 2]) -> Result<([f64; 2], f64)> {
        let pt = self.lift(z)?;
        let sm = poincare(self.model, &self.spec, &pt, 1, self.tol, self.max_time)?;
        let r = sm.returns[0];
        let s = r.pt.state();
        let (qi, pi) = self.spec.in_section_indices();
        Ok(([s[qi], s[pi]], r.time))
    }

    /// Central differences at `step` and `2 step`, Richardson-combined so the
    /// truncation error is fourth order.
    fn jacobian(&self, z: [f64; 2], step: f64) -> Result<[[f64; 2]; 2]> {
        let fine = self.central(z, step)?;
        let coarse = self.central(z, 2.0 * step)?;
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
            }
        }
        Ok(m)
    }

    fn central(&self, z: [f64; 2], step: f64) -> Result<[[f64; 2]; 2]> {
        let mut m = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += step;
            zm[j] -= step;
            let (fp, _) = self.apply(zp)?;
            let (fm, _) = self.apply(zm)?;
            for i in 0..2 {
                m[i][j] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        Ok(m)
    }
}

/// Refines `seed` to a periodic orbit of the section return map (Newton with
/// finite-difference Jacobian) and linearises the map there by extrapolated
/// central differences with step `1e-4`.
pub fn linearized_return_map(
    model: &HamiltonianModel,
    seed: &PhasePoint,
    spec: &SectionSpec,
    tol: f64,
    max_time: f64,
) -> Result<ReturnMapLinearization> {
    check_tol(tol)?;
    if spec.coord >= 2 {
        return Err(invalid("section.coord", "return maps need a position section"));
    }
    let rm = ReturnMap {
        model,
        spec: *spec,
        energy: model.eval(seed)?,
        seed: *seed,
        tol,
        max_time,
    };
    let (qi, pi) = spec.in_section_indices();
    let s0 = seed.state();
    let mut z = [s0[qi], s0[pi]];
    let fd_step = 1e-4;
    let mut converged = false;
    for _ in 0..20 {
        let (pz, _) = rm.apply(z)?;
        let r = [pz[0] - z[0], pz[1] - z[1]];
        let rn = r[0].hypot(r[1]);
        if rn <= 1e-12 {
            converged = true;
            break;
        }
        let m = rm.jacobian(z, fd_step)?;
        let a = [[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det.abs() < 1e-10 {
            // return map tangent to the identity: Newton is blind here
            converged = rn <= 1e-8;
            break;
        }
        let dz = [
            -(a[1][1] * r[0] - a[0][1] * r[1]) / det,
            -(-a[1][0] * r[0] + a[0][0] * r[1]) / det,
        ];
        z[0] += dz[0];
        z[1] += dz[1];
        if dz[0].hypot(dz[1]) <= 1e-12 {
            converged = true;
            break;
        }
    }
    let (pz, period) = rm.apply(z)?;
    let defect = (pz[0] - z[0]).hypot(pz[1] - z[1]);
    if !converged || defect > 1e-8 {
        return Err(Error::NotPeriodic { defect });
    }
    let m = rm.jacobian(z, fd_step)?;
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("non-finite monodromy".into()));
    }
    Ok(linearization_summary(z, period, m))
}

pub(crate) fn linearization_summary(fixed_point: [f64; 2], period: f64, m: [[f64; 2]; 2]) -> ReturnMapLinearization {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let trace = m[0][0] + m[1][1];
    let disc = trace * trace / 4.0 - det;
    let (eig_moduli, eig_phase, rotation_angle) = if disc < 0.0 {
        let im = (-disc).sqrt();
        let modulus = det.sqrt();
        let phase = im.atan2(trace / 2.0);
        let signed = (m[0][1].signum() * im).atan2(trace / 2.0);
        ([modulus, modulus], phase, signed.rem_euclid(2.0 * PI))
    } else {
        let r = disc.sqrt();
        let l1 = trace / 2.0 + r;
        let l2 = trace / 2.0 - r;
        let phase = if l1 < 0.0 && l2 < 0.0 { PI } else { 0.0 };
        ([l1.abs(), l2.abs()], phase, phase)
    };
    ReturnMapLinearization {
        fixed_point,
        period,
        matrix: m,
        det,
        trace,
        eig_moduli,
        eig_phase,
        rotation_angle,
    }
}

/// Distance between two angles on the circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}
