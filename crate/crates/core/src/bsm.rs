//! Bohr-Sommerfeld-Maslov eigenvalue lattices for Liouville metrics.
//!
//! Integer points `k` with `|h k - I|_inf <= C0 h^delta` around the actions
//! `I` of a reference torus are quantised as `J' = h (k + m/4)` and mapped
//! back to `(E, c)` by exact inversion of the action map.

use serde::{Deserialize, Serialize};

use crate::action_angle::{self, torus_chart, ActionInversion, TorusChart};
use crate::error::{invalid, Error, Result};
use crate::models::Liouville;

pub use crate::action_angle::invert_actions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizeParams {
    pub h: f64,
    pub delta: f64,
    pub c0: f64,
    /// Reference torus `(E, c)`; its actions are the lattice centre.
    pub center_energy: f64,
    pub center_sep_const: f64,
    /// Overrides the turning-point Maslov indices when set.
    #[serde(default)]
    pub maslov: Option<[u8; 2]>,
}

impl QuantizeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 0.5) {
            return Err(invalid("h", format!("{} not in (0, 0.5]", self.h)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid("delta", format!("{} not in (0, 1]", self.delta)));
        }
        if !(self.c0 > 0.0) {
            return Err(invalid("c0", "must be positive"));
        }
        if !self.center_energy.is_finite() || !self.center_sep_const.is_finite() {
            return Err(invalid("center", "must be finite"));
        }
        Ok(())
    }

    pub fn window(&self) -> f64 {
        self.c0 * self.h.powf(self.delta)
    }
}

/// Integer points with `|h k - I|_inf <= width`, lexicographic.
pub fn enumerate_lattice(h: f64, center: [f64; 2], width: f64) -> Result<Vec<[i64; 2]>> {
    let slack = 1e-9;
    let range = |c: f64| {
        let lo = ((c - width) / h - slack).ceil() as i64;
        let hi = ((c + width) / h + slack).floor() as i64;
        lo..=hi
    };
    let mut out = Vec::new();
    for k1 in range(center[0]) {
        for k2 in range(center[1]) {
            out.push([k1, k2]);
        }
    }
    if out.is_empty() {
        return Err(Error::WindowEmpty);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsmLatticePoint {
    pub k: [i64; 2],
    pub j_prime: [f64; 2],
    pub energy: f64,
    pub sep_const: f64,
    /// Predicted eigenvalue `E_k(h)`.
    pub e_k: f64,
    pub residual: f64,
    pub status: PointStatus,
    /// Failure description for dropped points.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumPrediction {
    pub params: QuantizeParams,
    pub center: TorusChart,
    pub maslov: [u8; 2],
    /// Converged points sorted by `E_k`.
    pub points: Vec<BsmLatticePoint>,
    pub dropped: Vec<BsmLatticePoint>,
    pub converged_fraction: f64,
    /// `max |E_k - E_center| / h^delta` over converged points.
    pub effective_c1: f64,
}

impl SpectrumPrediction {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.e_k).collect()
    }

    /// Range `[min E_k, max E_k]` of the converged predictions.
    pub fn energy_range(&self) -> Option<(f64, f64)> {
        let e = self.eigenvalues();
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo, hi))
    }
}

pub fn predict_spectrum(model: &Liouville, params: &QuantizeParams) -> Result<SpectrumPrediction> {
    params.validate()?;
    let (e0, c0) = (params.center_energy, params.center_sep_const);
    let center = torus_chart(model, e0, c0)?;
    let maslov = params.maslov.unwrap_or(center.maslov);
    let lattice = enumerate_lattice(params.h, center.actions, params.window())?;
    let b = {
        let m = action_angle::action_jacobian(model, e0, c0)?;
        let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
    };
    let h = params.h;
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for k in lattice {
        let jp = [
            h * (k[0] as f64 + maslov[0] as f64 / 4.0),
            h * (k[1] as f64 + maslov[1] as f64 / 4.0),
        ];
        let dj = [jp[0] - center.actions[0], jp[1] - center.actions[1]];
        let seed = (
            e0 + b[0][0] * dj[0] + b[0][1] * dj[1],
            c0 + b[1][0] * dj[0] + b[1][1] * dj[1],
        );
        let attempt = invert_actions(model, jp, seed).or_else(|_| invert_actions(model, jp, (e0, c0)));
        match attempt {
            Ok(ActionInversion {
                energy,
                sep_const,
                residual,
                ..
            }) => points.push(BsmLatticePoint {
                k,
                j_prime: jp,
                energy,
                sep_const,
                e_k: energy,
                residual,
                status: PointStatus::Ok,
                reason: None,
            }),
            Err(e) => dropped.push(BsmLatticePoint {
                k,
                j_prime: jp,
                energy: f64::NAN,
                sep_const: f64::NAN,
                e_k: f64::NAN,
                residual: f64::NAN,
                status: PointStatus::Dropped,
                reason: Some(e.to_string()),
            }),
        }
    }
    points.sort_by(|a, b| a.e_k.total_cmp(&b.e_k).then(a.k.cmp(&b.k)));
    let total = points.len() + dropped.len();
    let scale = h.powf(params.delta);
    let effective_c1 = points.iter().map(|p| (p.e_k - e0).abs() / scale).fold(0.0, f64::max);
    Ok(SpectrumPrediction {
        params: *params,
        maslov,
        converged_fraction: points.len() as f64 / total as f64,
        center,
        points,
        dropped,
        effective_c1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_params(h: f64, delta: f64, c0: f64) -> QuantizeParams {
        QuantizeParams {
            h,
            delta,
            c0,
            center_energy: 1.0,
            center_sep_const: -0.64,
            maslov: None,
        }
    }

    #[test]
    fn lattice_enumeration() {
        let pts = enumerate_lattice(0.1, [0.6, 0.8], 0.2).unwrap();
        assert_eq!(pts.len(), 25);
        assert_eq!(pts[0], [4, 6]);
        assert_eq!(pts[24], [8, 10]);
        assert!(pts.contains(&[6, 8]));
        let w = 0.1 * 0.5f64.sqrt();
        assert_eq!(enumerate_lattice(0.5, [0.6, 0.8], w), Err(Error::WindowEmpty));
    }

    #[test]
    fn flat_model_is_exact() {
        let pred = predict_spectrum(&Liouville::flat(), &flat_params(0.1, 1.0, 2.0)).unwrap();
        assert_eq!(pred.points.len(), 25);
        assert_eq!(pred.maslov, [0, 0]);
        for p in &pred.points {
            let exact = 0.01 * (p.k[0] * p.k[0] + p.k[1] * p.k[1]) as f64;
            assert!((p.e_k - exact).abs() < 1e-12, "{:?} {} {}", p.k, p.e_k, exact);
            assert!(p.residual <= 1e-10);
        }
        let hit = pred.points.iter().find(|p| p.k == [6, 8]).unwrap();
        assert!((hit.e_k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        assert!(flat_params(0.6, 0.5, 1.0).validate().is_err());
        assert!(flat_params(0.1, 1.5, 1.0).validate().is_err());
        assert!(flat_params(0.1, 0.5, 0.0).validate().is_err());
    }
}
