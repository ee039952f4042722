//! Reduction on resonant tori. A unimodular change of angles brings the
//! frequencies to `(w1, 0)`; the time factor averaged along the closed
//! orbits gives the fibre frequency `w1(psi2) = w1 / <G>_psi2`, whose level
//! structure and 1-D ladders `(hD)^2 / 2 + k1 w1(x2)` are computed here.

use std::f64::consts::PI;

use num_integer::Integer;
use roots::{find_root_brent, SimpleConvergency};
use serde::Serialize;

use crate::action_angle::TorusAngles;
use crate::error::{invalid, Error, Result};
use crate::mj::{time_factor, MjPair};
use crate::models::Liouville;
use crate::spectral::larmor_spectrum;
use crate::trig::TrigSeries;

/// Allowed mismatch between the frequency ratio and the declared rational.
pub const RATIO_TOL: f64 = 1e-10;
/// Allowed change of the profile under grid doubling.
pub const REFINEMENT_TOL: f64 = 1e-8;
/// Smallest admissible `|w1''|` at a critical point.
pub const MORSE_TOL: f64 = 1e-10;

/// `T in SL2(Z)` with `T w = (reduced_frequency, 0)`, `reduced_frequency > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Unimodular {
    pub matrix: [[i64; 2]; 2],
    /// Declared `w2 / w1 = p / q` in lowest terms, `q > 0`.
    pub ratio: (i64, i64),
    pub reduced_frequency: f64,
}

impl Unimodular {
    /// `T^{-1} psi`.
    pub fn to_original(&self, psi: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.matrix.map(|r| r.map(|v| v as f64));
        [d * psi[0] - b * psi[1], -c * psi[0] + a * psi[1]]
    }

    pub fn apply(&self, phi: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.matrix.map(|r| r.map(|v| v as f64));
        [a * phi[0] + b * phi[1], c * phi[0] + d * phi[1]]
    }
}

pub fn reduce_frequencies(omega: [f64; 2], p: i64, q: i64) -> Result<Unimodular> {
    if q == 0 || omega[0] == 0.0 || !omega.iter().all(|w| w.is_finite()) {
        return Err(invalid("ratio", "need q != 0 and w1 != 0"));
    }
    let g = p.gcd(&q);
    let (p, q) = if q < 0 { (-p / g, -q / g) } else { (p / g, q / g) };
    let ratio = omega[1] / omega[0];
    if (ratio - p as f64 / q as f64).abs() > RATIO_TOL {
        return Err(Error::NotRational { ratio, p, q });
    }
    // second row (p, -q) annihilates w; the first completes det = 1
    let e = p.extended_gcd(&q);
    let (mut r1, mut r2) = ([-e.y, -e.x], [p, -q]);
    let mut w = r1[0] as f64 * omega[0] + r1[1] as f64 * omega[1];
    if w < 0.0 {
        r1 = [-r1[0], -r1[1]];
        r2 = [-r2[0], -r2[1]];
        w = -w;
    }
    Ok(Unimodular {
        matrix: [r1, r2],
        ratio: (p, q),
        reduced_frequency: w,
    })
}

/// Fibre frequencies on `n_fibers` equispaced `psi2` nodes, each the
/// reduced frequency over the average of `g` along the closed orbit
/// `psi2 = const`, sampled with `n_orbit` nodes per winding of the orbit in
/// the original angles. `g` takes the original angles.
pub fn fiber_profile<G>(g: G, red: &Unimodular, n_fibers: usize, n_orbit: usize) -> Result<Vec<f64>>
where
    G: Fn([f64; 2]) -> Result<f64>,
{
    if n_fibers < 4 || n_orbit < 4 {
        return Err(invalid("grid", "need at least 4 nodes per direction"));
    }
    // psi1 -> T^{-1}(psi1, psi2) winds (d, -c) times around the torus
    let [_, [c, d]] = red.matrix;
    let nodes = n_orbit * c.unsigned_abs().max(d.unsigned_abs()).max(1) as usize;
    (0..n_fibers)
        .map(|j| {
            let psi2 = 2.0 * PI * j as f64 / n_fibers as f64;
            let mut acc = 0.0;
            for i in 0..nodes {
                let psi1 = 2.0 * PI * i as f64 / nodes as f64;
                let v = g(red.to_original([psi1, psi2]))?;
                if !(v > 0.0) {
                    return Err(Error::Degenerate(format!("time factor {v} is not positive")));
                }
                acc += v;
            }
            Ok(red.reduced_frequency * nodes as f64 / acc)
        })
        .collect()
}

/// Reduced model `H0 + w1(x2) xi1 + xi2^2 / 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedModel {
    pub base_energy: f64,
    pub omega1: TrigSeries,
    /// Fibre and orbit node counts used for the profile.
    pub grid: [usize; 2],
    /// Whether the `xi2^2 / 2` term is present; required for spectra.
    pub kinetic_term: bool,
    pub reduction: Unimodular,
    /// Max change of the profile under grid doubling.
    pub refinement_change: f64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Profile from synthetic `g`, refined once by doubling both grids.
pub fn reduced_model<G>(
    g: G,
    omega: [f64; 2],
    ratio: (i64, i64),
    base_energy: f64,
    n_fibers: usize,
    n_orbit: usize,
) -> Result<ReducedModel>
where
    G: Fn([f64; 2]) -> Result<f64>,
{
    let red = reduce_frequencies(omega, ratio.0, ratio.1)?;
    let coarse = fiber_profile(&g, &red, n_fibers, n_orbit)?;
    let fine = fiber_profile(&g, &red, 2 * n_fibers, 2 * n_orbit)?;
    let change = coarse
        .iter()
        .enumerate()
        .map(|(j, c)| (c - fine[2 * j]).abs())
        .fold(0.0, f64::max);
    if change > REFINEMENT_TOL {
        return Err(Error::NoConvergence(format!(
            "fibre profile moved by {change:e} under grid doubling"
        )));
    }
    let omega1 = TrigSeries::from_samples(&fine, fine.len() / 2 - 1)?;
    Ok(ReducedModel {
        base_energy,
        omega1,
        grid: [2 * n_fibers, 2 * n_orbit],
        kinetic_term: true,
        reduction: red,
        refinement_change: change,
        samples: fine,
    })
}

/// Profile of an MJ pair on a resonant torus of `K`.
pub fn fiber_frequency(
    pair: &MjPair,
    torus: &TorusAngles,
    ratio: (i64, i64),
    n_fibers: usize,
    n_orbit: usize,
) -> Result<ReducedModel> {
    let g = |phi: [f64; 2]| time_factor(pair, &torus.phase_point(torus.invert(phi)?));
    reduced_model(g, torus.frequencies(), ratio, pair.energy_h, n_fibers, n_orbit)
}

/// Separation constant in `[c_lo, c_hi]` with `w2 / w1 = p / q` at fixed
/// energy.
pub fn resonant_sep_const(model: &Liouville, energy: f64, ratio: (i64, i64), c_lo: f64, c_hi: f64) -> Result<f64> {
    let (p, q) = (ratio.0 as f64, ratio.1 as f64);
    let defect = |c: f64| -> f64 {
        match TorusAngles::new(model, energy, c, [1.0, 1.0]) {
            Ok(t) => {
                let w = t.frequencies();
                q * w[1] - p * w[0]
            }
            Err(_) => f64::NAN,
        }
    };
    let (a, b) = (defect(c_lo), defect(c_hi));
    if !(a * b <= 0.0) {
        return Err(invalid(
            "sep_const",
            format!("[{c_lo}, {c_hi}] does not bracket the resonance"),
        ));
    }
    let mut conv = SimpleConvergency {
        eps: 1e-14,
        max_iter: 200,
    };
    find_root_brent(c_lo, c_hi, defect, &mut conv).map_err(|e| Error::NoConvergence(format!("resonance search: {e:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub at: f64,
    pub value: f64,
    pub second: f64,
    pub kind: CriticalKind,
}

/// Regular values strictly between consecutive critical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelInterval {
    pub lo: f64,
    pub hi: f64,
    /// Points of `{w1 = c}` on the circle.
    pub level_points: usize,
    /// Arcs of `{w1 < c}`.
    pub sublevel_components: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Well {
    pub min_at: f64,
    pub min_value: f64,
    /// Basin between the neighbouring maxima, `lo < min_at < hi` (lifted).
    pub basin: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReebSummary {
    /// Constant profile: a single degenerate level.
    pub trivial: bool,
    pub critical_points: Vec<CriticalPoint>,
    pub critical_values: Vec<f64>,
    pub intervals: Vec<LevelInterval>,
    pub wells: Vec<Well>,
}

const REEB_SCAN: usize = 4096;

/// Profiles whose derivative stays below `REFINEMENT_TOL` (relative) are
/// constant to within their own accuracy and reported as trivial.
pub fn reeb_components(profile: &TrigSeries) -> Result<ReebSummary> {
    let d = profile.derivative();
    let scale = d
        .cos_coeffs()
        .iter()
        .chain(d.sin_coeffs())
        .map(|c| c.abs())
        .sum::<f64>();
    if scale <= REFINEMENT_TOL * profile.cos_coeffs()[0].abs().max(1.0) {
        return Ok(ReebSummary {
            trivial: true,
            critical_points: Vec::new(),
            critical_values: vec![profile.eval(0.0)],
            intervals: Vec::new(),
            wells: Vec::new(),
        });
    }
    let n = REEB_SCAN;
    let xs: Vec<f64> = (0..=n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let ds: Vec<f64> = xs.iter().map(|&x| d.eval(x)).collect();
    let mut critical_points = Vec::new();
    for i in 0..n {
        let (a, b) = (ds[i], ds[i + 1]);
        let at = if a == 0.0 {
            xs[i]
        } else if a * b < 0.0 {
            let mut conv = SimpleConvergency {
                eps: 1e-15,
                max_iter: 200,
            };
            find_root_brent(xs[i], xs[i + 1], |x| d.eval(x), &mut conv)
                .map_err(|e| Error::NoConvergence(format!("critical point: {e:?}")))?
        } else {
            // a tangential zero of w1' has no sign change
            let (l, r) = (ds[(i + n - 1) % n].abs(), b.abs());
            if a.abs() < 1e-12 * scale && a.abs() <= l && a.abs() <= r {
                return Err(Error::DegenerateCritical {
                    at: xs[i],
                    second: profile.eval_derivs(xs[i])[2],
                });
            }
            continue;
        };
        let [value, _, second] = profile.eval_derivs(at);
        if second.abs() < MORSE_TOL {
            return Err(Error::DegenerateCritical { at, second });
        }
        let kind = if second > 0.0 {
            CriticalKind::Min
        } else {
            CriticalKind::Max
        };
        critical_points.push(CriticalPoint {
            at,
            value,
            second,
            kind,
        });
    }
    let mut critical_values: Vec<f64> = critical_points.iter().map(|c| c.value).collect();
    critical_values.sort_by(f64::total_cmp);
    critical_values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let m = critical_points.len();
    let intervals = critical_values
        .windows(2)
        .map(|w| {
            let c = 0.5 * (w[0] + w[1]);
            // monotone arcs between consecutive critical points crossing c
            let level_points = (0..m)
                .filter(|&k| {
                    let (a, b) = (critical_points[k].value, critical_points[(k + 1) % m].value);
                    (a - c) * (b - c) < 0.0
                })
                .count();
            LevelInterval {
                lo: w[0],
                hi: w[1],
                level_points,
                sublevel_components: level_points / 2,
            }
        })
        .collect();
    let wells = (0..m)
        .filter(|&k| critical_points[k].kind == CriticalKind::Min)
        .map(|k| {
            let c = critical_points[k];
            let prev = critical_points[(k + m - 1) % m].at;
            let next = critical_points[(k + 1) % m].at;
            let lo = if prev < c.at { prev } else { prev - 2.0 * PI };
            let hi = if next > c.at { next } else { next + 2.0 * PI };
            Well {
                min_at: c.at,
                min_value: c.value,
                basin: (lo, hi),
            }
        })
        .collect();
    Ok(ReebSummary {
        trivial: false,
        critical_points,
        critical_values,
        intervals,
        wells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ladder {
    pub k1: f64,
    /// `H0` plus the eigenvalues below the cutoff, ascending.
    pub energies: Vec<f64>,
}

/// `k1 = 2 pi h n` with `|k1| <= h^delta`.
pub fn k1_lattice(h: f64, delta: f64) -> Vec<f64> {
    let bound = h.powf(delta);
    let step = 2.0 * PI * h;
    let n = (bound / step + 1e-12).floor() as i64;
    (-n..=n).map(|j| step * j as f64).collect()
}

pub fn reduced_spectrum(model: &ReducedModel, h: f64, k1s: &[f64], modes: usize, cutoff: f64) -> Result<Vec<Ladder>> {
    if !model.kinetic_term {
        return Err(invalid("kinetic_term", "spectra need the xi2^2/2 term"));
    }
    k1s.iter()
        .map(|&k1| {
            let e = larmor_spectrum(&model.omega1, k1, h, modes, cutoff - model.base_energy)?;
            Ok(Ladder {
                k1,
                energies: e.iter().map(|x| x + model.base_energy).collect(),
            })
        })
        .collect()
}

/// `h sqrt(k1 w1'')` at the global minimum of the profile.
pub fn harmonic_spacing(profile: &TrigSeries, k1: f64, h: f64) -> Result<f64> {
    let reeb = reeb_components(profile)?;
    let min = reeb
        .critical_points
        .iter()
        .filter(|c| c.kind == CriticalKind::Min)
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| invalid("profile", "no minimum"))?;
    Ok(h * (k1 * min.second).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unimodular_reduction() {
        let w = [1.0, 2.0 / 3.0];
        let t = reduce_frequencies(w, 2, 3).unwrap();
        let [[a, b], [c, d]] = t.matrix;
        assert_eq!(a * d - b * c, 1);
        let r = t.apply(w);
        assert!(r[1].abs() < 1e-15);
        assert!((r[0] - t.reduced_frequency).abs() < 1e-15 && r[0] > 0.0);
        let back = t.to_original(t.apply([0.3, 0.7]));
        assert!((back[0] - 0.3).abs() < 1e-14 && (back[1] - 0.7).abs() < 1e-14);
        assert!(matches!(
            reduce_frequencies([1.0, 0.6667], 2, 3),
            Err(Error::NotRational { .. })
        ));
    }

    #[test]
    fn unit_factor_gives_constant_profile() {
        let m = reduced_model(|_| Ok(1.0), [1.3, 0.0], (0, 1), 0.0, 16, 16).unwrap();
        assert_eq!(m.reduction.matrix, [[1, 0], [0, 1]]);
        assert!(m.samples.iter().all(|v| (v - 1.3).abs() < 1e-14));
    }

    #[test]
    fn fibre_independent_factor() {
        let g = |phi: [f64; 2]| Ok(1.0 + 0.2 * phi[1].cos());
        let m = reduced_model(g, [1.3, 0.0], (0, 1), 0.0, 16, 16).unwrap();
        for (j, v) in m.samples.iter().enumerate() {
            let psi2 = 2.0 * PI * j as f64 / m.samples.len() as f64;
            assert!((v - 1.3 / (1.0 + 0.2 * psi2.cos())).abs() < 1e-14);
        }
    }

    #[test]
    fn single_harmonic_reeb() {
        let r = reeb_components(&TrigSeries::cosine(1.0, 1.0)).unwrap();
        assert_eq!(r.critical_points.len(), 2);
        assert_eq!(r.critical_values.len(), 2);
        assert!((r.critical_values[0]).abs() < 1e-14 && (r.critical_values[1] - 2.0).abs() < 1e-14);
        assert_eq!(r.intervals.len(), 1);
        assert_eq!(r.intervals[0].level_points, 2);
        assert_eq!(r.intervals[0].sublevel_components, 1);
        assert_eq!(r.wells.len(), 1);
        assert!((r.wells[0].min_at - PI).abs() < 1e-12);
        assert!(reeb_components(&TrigSeries::constant(2.0)).unwrap().trivial);
    }

    #[test]
    fn two_well_reeb() {
        let s = TrigSeries::new(vec![1.0, 1.0, 0.3], vec![]).unwrap();
        let r = reeb_components(&s).unwrap();
        assert_eq!(r.wells.len(), 2);
        assert_eq!(r.critical_values.len(), 3);
        assert!((r.critical_values[1] - 0.3).abs() < 1e-12);
        assert!((r.critical_values[2] - 2.3).abs() < 1e-12);
        assert_eq!(r.intervals[0].sublevel_components, 2);
        assert_eq!(r.intervals[1].sublevel_components, 1);
    }

    #[test]
    fn degenerate_critical_point() {
        // 1 - cos^3-type flat extremum
        let s = TrigSeries::new(vec![0.0, 0.75, 0.0, 0.25], vec![]).unwrap();
        assert!(matches!(reeb_components(&s), Err(Error::DegenerateCritical { .. })));
    }

    #[test]
    fn k1_lattice_range() {
        let k = k1_lattice(0.01, 0.5);
        assert_eq!(k.len(), 3);
        assert!((k[2] - 2.0 * PI * 0.01).abs() < 1e-15);
    }
}
