use std::f64::consts::PI;

use proptest::prelude::*;

use mjspectra_core::flow::integrate;
use mjspectra_core::katok::{
    convergents, equator_orbits, equator_point, expected_period, katok_report, mj_breaking_scan, Heading, CLOSURE_TOL,
};
use mjspectra_core::models::{HamiltonianModel, KatokRanders, PhasePoint};

#[test]
fn equator_energy_is_conserved_over_ten_periods() {
    let alpha = 0.3;
    let m = HamiltonianModel::KatokRanders(KatokRanders::new(alpha).unwrap());
    for heading in [Heading::East, Heading::West] {
        let pt0 = equator_point(alpha, heading);
        let tr = integrate(&m, &pt0, 10.0 * expected_period(alpha, heading), 1e-12).unwrap();
        let e0 = tr.energy0();
        assert!((e0 - 1.0).abs() <= 1e-14);
        let worst = tr.samples.iter().map(|s| (s.energy - e0).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-9, "{worst}");
    }
}

#[test]
fn off_equator_energy_is_conserved() {
    let m = HamiltonianModel::KatokRanders(KatokRanders::new(0.4).unwrap());
    let pt0 = PhasePoint::new([0.0, 0.3], [0.5, 0.6]);
    let tr = integrate(&m, &pt0, 60.0, 1e-12).unwrap();
    let e0 = tr.energy0();
    assert!(tr.samples.iter().all(|s| (s.energy - e0).abs() <= 1e-9));
}

#[test]
fn the_two_equator_periods_straddle_the_round_period() {
    for alpha in [0.1, 0.25, (5f64.sqrt() - 1.0) / 4.0] {
        let (east, west) = equator_orbits(alpha).unwrap();
        assert!(east.period < 2.0 * PI && 2.0 * PI < west.period);
        // 1/T+ + 1/T- = 1/pi for every alpha
        assert!((1.0 / east.period + 1.0 / west.period - 1.0 / PI).abs() <= 1e-9);
    }
}

#[test]
fn report_collects_orbits_angles_and_breaking() {
    let r = katok_report(0.3, &[0.0, 0.2, 0.5]).unwrap();
    assert!(r.orbits.iter().all(|o| o.closure_defect <= CLOSURE_TOL));
    assert!(r.angles.iter().all(|a| (a.det - 1.0).abs() <= 1e-6));
    assert_eq!(r.breaking.len(), 6);
    assert!(r
        .breaking
        .iter()
        .filter(|b| b.latitude == 0.0)
        .all(|b| b.defect <= 1e-12));
    assert!(r.breaking.iter().filter(|b| b.latitude > 0.0).all(|b| b.defect > 1e-6));
}

#[test]
fn breaking_is_even_in_latitude() {
    let lat = [0.1, 0.3, 0.6, 0.9];
    let neg: Vec<f64> = lat.iter().map(|l| -l).collect();
    let a = mj_breaking_scan(0.5, &lat).unwrap();
    let b = mj_breaking_scan(0.5, &neg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.heading, y.heading);
        assert!(x.defect > 1e-6 && (x.defect - y.defect).abs() <= 1e-12);
    }
    assert!(mj_breaking_scan(0.5, &[1.5]).is_err());
}

#[test]
fn convergents_approach_the_golden_ratio() {
    let x = (5f64.sqrt() - 1.0) / 2.0;
    let c = convergents(x, 1000);
    assert!(c.windows(2).all(|w| w[1].q >= w[0].q && w[1].error < w[0].error));
    for k in &c {
        assert!(k.error <= 1.0 / (k.q * k.q) as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn measured_periods_follow_the_closed_form(alpha in 0.05f64..0.9) {
        let (east, west) = equator_orbits(alpha).unwrap();
        prop_assert!((east.period - 2.0 * PI / (1.0 + alpha)).abs() <= 1e-8);
        prop_assert!((west.period - 2.0 * PI / (1.0 - alpha)).abs() <= 1e-8);
        let (e2, w2) = equator_orbits(-alpha).unwrap();
        prop_assert!((e2.period - west.period).abs() <= 1e-8 && (w2.period - east.period).abs() <= 1e-8);
    }
}
