//! Equatorial geodesics of the Katok Randers sphere.
//!
//! The symbol `sqrt(p2^2 + p1^2 / cos^2 q2) + alpha p1` has exactly two
//! closed orbits on the equator, swept at speeds `1 + alpha` (eastward) and
//! `1 - alpha` (westward). Their transverse linearisation is a harmonic
//! oscillator of unit frequency, so each return map is a rotation by the
//! orbit period.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flow::{self, circular_distance, Direction, SectionSpec};
use crate::models::{HamiltonianModel, KatokRanders, PhasePoint};

pub const INTEGRATION_TOL: f64 = 1e-12;
pub const CLOSURE_TOL: f64 = 1e-6;
/// Latitudes closer than this to a pole are refused by the scan.
pub const POLE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    East,
    West,
}

impl Heading {
    fn sign(self) -> f64 {
        match self {
            Heading::East => 1.0,
            Heading::West => -1.0,
        }
    }

    fn direction(self) -> Direction {
        match self {
            Heading::East => Direction::Up,
            Heading::West => Direction::Down,
        }
    }
}

fn model(alpha: f64) -> Result<HamiltonianModel> {
    Ok(HamiltonianModel::KatokRanders(KatokRanders::new(alpha)?))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.abs() < 1.0) || alpha == 0.0 {
        return Err(invalid("katok_alpha", format!("{alpha} not in (-1, 0) or (0, 1)")));
    }
    Ok(())
}

/// Equatorial covector on `H = 1` heading east or west.
pub fn equator_point(alpha: f64, heading: Heading) -> PhasePoint {
    let s = heading.sign();
    PhasePoint::new([0.0, 0.0], [s / (1.0 + s * alpha), 0.0])
}

/// Exact period `2 pi / (1 +- alpha)`.
pub fn expected_period(alpha: f64, heading: Heading) -> f64 {
    2.0 * PI / (1.0 + heading.sign() * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedOrbit {
    pub heading: Heading,
    pub period: f64,
    pub expected: f64,
    pub relative_defect: f64,
    /// Phase-space distance between the start and the first return.
    pub closure_defect: f64,
}

fn closed_orbit(alpha: f64, heading: Heading) -> Result<ClosedOrbit> {
    let m = model(alpha)?;
    let pt0 = equator_point(alpha, heading);
    let expected = expected_period(alpha, heading);
    let spec = SectionSpec::angle(0, 0.0, heading.direction());
    let sm = flow::poincare(&m, &spec, &pt0, 1, INTEGRATION_TOL, 4.0 * expected)?;
    let r = sm.returns[0];
    let (a, b) = (pt0.state(), r.pt.state());
    let closure_defect = [spec.residual(&b), b[1] - a[1], b[2] - a[2], b[3] - a[3]]
        .iter()
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt();
    if closure_defect > CLOSURE_TOL {
        return Err(Error::NotClosed { defect: closure_defect });
    }
    Ok(ClosedOrbit {
        heading,
        period: r.time,
        expected,
        relative_defect: (r.time - expected).abs() / expected,
        closure_defect,
    })
}

/// Measured periods `(T+, T-)` of the eastward and westward equator.
pub fn equator_orbits(alpha: f64) -> Result<(ClosedOrbit, ClosedOrbit)> {
    check_alpha(alpha)?;
    Ok((closed_orbit(alpha, Heading::East)?, closed_orbit(alpha, Heading::West)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Convergent {
    pub p: i64,
    pub q: i64,
    /// `|x - p/q|`.
    pub error: f64,
}

/// Continued-fraction convergents of `x` with denominators up to `max_q`.
pub fn convergents(x: f64, max_q: i64) -> Vec<Convergent> {
    let mut out = Vec::new();
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (p, q) = (a as i64 * p1 + p0, a as i64 * q1 + q0);
        if q > max_q {
            break;
        }
        out.push(Convergent {
            p,
            q,
            error: (x - p as f64 / q as f64).abs(),
        });
        (p0, q0, p1, q1) = (p1, q1, p, q);
        let frac = r - a;
        if frac < 1e-12 {
            break;
        }
        r = 1.0 / frac;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationAngle {
    pub heading: Heading,
    /// Expected angle `2 pi / (1 +- alpha)` before reduction.
    pub expected_raw: f64,
    pub expected_reduced: f64,
    /// Measured angle in `[0, 2 pi)`.
    pub measured: f64,
    /// Unsigned eigenvalue phase in `[0, pi]`.
    pub eig_phase: f64,
    pub defect: f64,
    pub det: f64,
    pub eig_moduli: [f64; 2],
    pub return_time: f64,
    /// Convergents of `measured / 2 pi` with denominators up to 1000.
    pub convergents: Vec<Convergent>,
}

fn rotation_angle(alpha: f64, heading: Heading) -> Result<RotationAngle> {
    let m = model(alpha)?;
    let pt0 = equator_point(alpha, heading);
    let expected_raw = expected_period(alpha, heading);
    let spec = SectionSpec::angle(0, 0.0, heading.direction());
    let lin = flow::linearized_return_map(&m, &pt0, &spec, INTEGRATION_TOL, 4.0 * expected_raw)?;
    let expected_reduced = expected_raw.rem_euclid(2.0 * PI);
    Ok(RotationAngle {
        heading,
        expected_raw,
        expected_reduced,
        measured: lin.rotation_angle,
        eig_phase: lin.eig_phase,
        defect: circular_distance(lin.rotation_angle, expected_reduced),
        det: lin.det,
        eig_moduli: lin.eig_moduli,
        return_time: lin.period,
        convergents: convergents(lin.rotation_angle / (2.0 * PI), 1000),
    })
}

/// Rotation angles `(theta+, theta-)` of the linearised return maps on the
/// section `q1 = 0`.
pub fn poincare_angles(alpha: f64) -> Result<(RotationAngle, RotationAngle)> {
    check_alpha(alpha)?;
    Ok((
        rotation_angle(alpha, Heading::East)?,
        rotation_angle(alpha, Heading::West)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakingSample {
    pub latitude: f64,
    pub heading: Heading,
    pub defect: f64,
}

/// Parallelism defect between the Katok and round-sphere vector fields at
/// the latitude-parallel covectors of the Katok surface `H = 1`.
///
/// Both symbols are homogeneous of degree one, so comparing at the same
/// covector is the same as comparing at matched energies.
pub fn mj_breaking_scan(alpha: f64, latitudes: &[f64]) -> Result<Vec<BreakingSample>> {
    let katok = model(alpha)?;
    let round = model(0.0)?;
    let mut out = Vec::with_capacity(2 * latitudes.len());
    for &q2 in latitudes {
        if !(q2.abs() <= PI / 2.0 - POLE_MARGIN) {
            return Err(invalid("latitudes", format!("{q2} too close to a pole")));
        }
        for heading in [Heading::East, Heading::West] {
            let s = heading.sign();
            let p1 = s / (1.0 / q2.cos() + s * alpha);
            let pt = PhasePoint::new([0.0, q2], [p1, 0.0]);
            let par = crate::mj::parallelism(&round, &katok, &pt)?;
            out.push(BreakingSample {
                latitude: q2,
                heading,
                defect: par.defect,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KatokReport {
    pub katok_alpha: f64,
    pub closure_tol: f64,
    pub orbits: [ClosedOrbit; 2],
    pub angles: [RotationAngle; 2],
    pub breaking: Vec<BreakingSample>,
}

pub fn katok_report(alpha: f64, latitudes: &[f64]) -> Result<KatokReport> {
    let (tp, tm) = equator_orbits(alpha)?;
    let (ap, am) = poincare_angles(alpha)?;
    Ok(KatokReport {
        katok_alpha: alpha,
        closure_tol: CLOSURE_TOL,
        orbits: [tp, tm],
        angles: [ap, am],
        breaking: mj_breaking_scan(alpha, latitudes)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periods_at_one_half() {
        let (tp, tm) = equator_orbits(0.5).unwrap();
        assert!((tp.period - 2.0 * PI / 1.5).abs() < 1e-9);
        assert!((tm.period - 4.0 * PI).abs() < 1e-9);
        assert!(tp.period < 2.0 * PI && 2.0 * PI < tm.period);
        assert!(tp.closure_defect < 1e-9 && tm.closure_defect < 1e-9);
    }

    #[test]
    fn alpha_sign_swaps_periods() {
        let (a, b) = equator_orbits(0.3).unwrap();
        let (c, d) = equator_orbits(-0.3).unwrap();
        assert!((a.period - d.period).abs() < 1e-9);
        assert!((b.period - c.period).abs() < 1e-9);
        assert!(equator_orbits(0.0).is_err());
    }

    #[test]
    fn rotation_angles_match() {
        let (ap, am) = poincare_angles(0.5).unwrap();
        assert!((ap.measured - 4.18879020478639).abs() < 1e-4, "{ap:?}");
        assert!(ap.defect < 1e-4 && am.defect < 1e-4, "{am:?}");
        assert!(
            (ap.det - 1.0).abs() < 1e-6 && (am.det - 1.0).abs() < 1e-6,
            "{ap:?} {am:?}"
        );
        assert!((ap.eig_moduli[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn golden_alpha_angles() {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (ap, am) = poincare_angles(g).unwrap();
        assert!(ap.defect < 1e-4 && am.defect < 1e-4);
        for a in [&ap, &am] {
            assert!((a.eig_moduli[0] - 1.0).abs() < 1e-6);
            assert!(a.convergents.len() >= 3);
            let last = a.convergents.last().unwrap();
            assert!(last.error > 0.0);
        }
    }

    #[test]
    fn convergents_of_sqrt2() {
        let c = convergents(2f64.sqrt() - 1.0, 100);
        let qs: Vec<i64> = c.iter().map(|c| c.q).collect();
        assert_eq!(qs, vec![1, 2, 5, 12, 29, 70]);
    }

    #[test]
    fn breaking_profile() {
        let lats = [0.0, 0.1, 0.5, -0.5];
        let s = mj_breaking_scan(0.5, &lats).unwrap();
        assert!(s[0].defect <= 1e-10 && s[1].defect <= 1e-10);
        let at = |q: f64| s.iter().filter(move |b| b.latitude == q).map(|b| b.defect);
        assert!(at(0.5).all(|d| d > 0.01));
        assert!(at(0.1).all(|d| d > 0.0));
        let zero = mj_breaking_scan(0.0, &lats).unwrap();
        assert!(zero.iter().all(|b| b.defect <= 1e-14));
        assert!(mj_breaking_scan(0.5, &[1.5]).is_err());
    }

    #[test]
    fn symbol_is_not_reversible() {
        let m = model(0.5).unwrap();
        let pt = PhasePoint::new([0.3, 0.2], [0.4, -0.7]);
        assert!((m.eval(&pt).unwrap() - m.eval(&pt.reversed()).unwrap()).abs() > 0.1);
    }
}
