use std::collections::HashMap;

use proptest::prelude::*;

use mjspectra_core::bsm::{enumerate_lattice, predict_spectrum, PointStatus, QuantizeParams};
use mjspectra_core::models::Liouville;
use mjspectra_core::trig::TrigSeries;

fn model() -> Liouville {
    Liouville::new(TrigSeries::cosine(1.0, 0.3), TrigSeries::cosine(0.0, 0.2)).unwrap()
}

fn params(h: f64, delta: f64, c0: f64) -> QuantizeParams {
    QuantizeParams {
        h,
        delta,
        c0,
        center_energy: 1.0,
        center_sep_const: -0.45,
        maslov: None,
    }
}

#[test]
fn points_respect_window_and_residual() {
    let p = params(0.02, 0.5, 0.3);
    let pred = predict_spectrum(&model(), &p).unwrap();
    assert!(pred.dropped.is_empty() && pred.converged_fraction == 1.0);
    let w = p.window();
    for pt in &pred.points {
        assert_eq!(pt.status, PointStatus::Ok);
        assert!(pt.residual <= 1e-10);
        let k = [pt.k[0] as f64, pt.k[1] as f64];
        for i in 0..2 {
            assert!((p.h * k[i] - pred.center.actions[i]).abs() <= w + 1e-9 * p.h);
        }
    }
    assert!(pred.points.windows(2).all(|w| w[0].e_k <= w[1].e_k));
}

#[test]
fn energies_increase_along_the_frequency_direction() {
    let pred = predict_spectrum(&model(), &params(0.01, 0.5, 0.3)).unwrap();
    let w = pred.center.frequencies;
    assert!(w[0] > 0.0 && w[1] > 0.0);
    let by_k: HashMap<[i64; 2], f64> = pred.points.iter().map(|p| (p.k, p.e_k)).collect();
    let mut checked = 0;
    for (k, e) in &by_k {
        for step in [[1, 0], [0, 1]] {
            if let Some(next) = by_k.get(&[k[0] + step[0], k[1] + step[1]]) {
                assert!(next > e);
                checked += 1;
            }
        }
    }
    assert!(checked > 20);
}

#[test]
fn halving_h_quadruples_a_fixed_window_count() {
    let m = model();
    let center = predict_spectrum(&m, &params(0.02, 1.0, 2.0)).unwrap().center.actions;
    let count = |h: f64| enumerate_lattice(h, center, 0.08).unwrap().len() as f64;
    for h in [0.02, 0.01, 0.005] {
        let ratio = count(h / 2.0) / count(h);
        assert!((3.0..=5.0).contains(&ratio), "h={h}: ratio {ratio}");
    }
}

#[test]
fn scaled_window_count_follows_the_window_exponent() {
    // |h k - I| <= C0 h^delta holds about (2 C0 h^(delta - 1))^2 points
    let m = model();
    let count = |h: f64, d: f64, c0: f64| predict_spectrum(&m, &params(h, d, c0)).unwrap().points.len() as f64;
    let r1 = count(0.01, 1.0, 2.0) / count(0.02, 1.0, 2.0);
    assert!((0.6..=1.6).contains(&r1), "delta = 1: ratio {r1}");
    let r2 = count(0.005, 0.5, 0.3) / count(0.02, 0.5, 0.3);
    assert!((2.5..=6.0).contains(&r2), "delta = 1/2: ratio {r2}");
}

#[test]
fn flat_predictions_are_exact() {
    let p = QuantizeParams {
        h: 0.05,
        delta: 1.0,
        c0: 3.0,
        center_energy: 1.0,
        center_sep_const: -0.5,
        maslov: None,
    };
    let pred = predict_spectrum(&Liouville::flat(), &p).unwrap();
    assert!(pred.points.len() >= 25);
    for pt in &pred.points {
        let exact = 0.0025 * (pt.k[0] * pt.k[0] + pt.k[1] * pt.k[1]) as f64;
        assert!((pt.e_k - exact).abs() <= 1e-12, "{:?} {} {}", pt.k, pt.e_k, exact);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lattice_points_lie_in_the_window(h in 0.01f64..0.2, c1 in 0.1f64..2.0, c2 in 0.1f64..2.0, w in 0.05f64..0.5) {
        if let Ok(pts) = enumerate_lattice(h, [c1, c2], w) {
            for k in &pts {
                prop_assert!((h * k[0] as f64 - c1).abs() <= w + 1e-8);
                prop_assert!((h * k[1] as f64 - c2).abs() <= w + 1e-8);
            }
            let n1 = ((c1 + w) / h).floor() - ((c1 - w) / h).ceil() + 1.0;
            let n2 = ((c2 + w) / h).floor() - ((c2 - w) / h).ceil() + 1.0;
            prop_assert!((pts.len() as f64 - n1 * n2).abs() <= n1 + n2 + 1.0);
        }
    }
}
