use std::f64::consts::PI;

use proptest::prelude::*;

use mjspectra_core::flow::{
    integrate, linearized_return_map, orbit_distance, poincare, rotation_number, Direction, Projection, SectionSpec,
};
use mjspectra_core::models::{HamiltonianModel, Liouville, Mechanical, PhasePoint};
use mjspectra_core::trig::{FieldTerm, TorusField, TrigSeries};

fn mechanical() -> HamiltonianModel {
    HamiltonianModel::Mechanical(Mechanical::flat(
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
        .unwrap(),
    ))
}

fn liouville() -> HamiltonianModel {
    HamiltonianModel::Liouville(Liouville::new(TrigSeries::cosine(1.0, 0.3), TrigSeries::cosine(0.0, 0.2)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn drift_stays_within_budget(x1 in 0.0..2.0 * PI, x2 in 0.0..2.0 * PI, th in 0.0..2.0 * PI) {
        for m in [mechanical(), liouville()] {
            let pt0 = PhasePoint::new([x1, x2], [0.9 * th.cos(), 0.9 * th.sin()]);
            let tr = integrate(&m, &pt0, 20.0, 1e-10).unwrap();
            prop_assert!(tr.within_budget());
            let e0 = tr.energy0();
            let worst = tr.samples.iter().map(|s| (s.energy - e0).abs()).fold(0.0, f64::max);
            prop_assert!(worst <= tr.stats.drift_budget * e0.abs().max(1.0));
        }
    }

    #[test]
    fn reversal_retraces_even_models(x1 in 0.0..2.0 * PI, x2 in 0.0..2.0 * PI, th in 0.0..2.0 * PI) {
        for m in [mechanical(), liouville()] {
            let pt0 = PhasePoint::new([x1, x2], [0.9 * th.cos(), 0.9 * th.sin()]);
            let fwd = integrate(&m, &pt0, 5.0, 1e-12).unwrap();
            let back = integrate(&m, &fwd.last().pt.reversed(), 5.0, 1e-12).unwrap();
            let end = back.last().pt.reversed();
            let d = pt0.state().iter().zip(end.state()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(d <= 1e-8, "{d}");
        }
    }
}

#[test]
fn orbit_distance_is_a_metric_on_samples() {
    let m = mechanical();
    let trs: Vec<_> = [[0.6, 0.8], [0.8, 0.6], [0.7, 0.7]]
        .iter()
        .map(|p| integrate(&m, &PhasePoint::new([0.0, 0.0], *p), 4.0, 1e-10).unwrap())
        .collect();
    for proj in [Projection::Position, Projection::Phase] {
        let d = |i: usize, j: usize| orbit_distance(&trs[i], &trs[j], proj).unwrap();
        assert_eq!(d(0, 1), d(1, 0));
        assert_eq!(d(2, 2), 0.0);
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            assert!(d(i, k) <= d(i, j) + d(j, k) + 1e-12);
        }
    }
}

#[test]
fn return_map_is_area_preserving() {
    // x2 = 0, p2 = 0 is invariant because V is even in x2
    let m = mechanical();
    let pt0 = PhasePoint::new([0.0, 0.0], [(2.0f64 * 0.5).sqrt(), 0.0]);
    let spec = SectionSpec::angle(0, 0.0, Direction::Up);
    let lin = linearized_return_map(&m, &pt0, &spec, 1e-12, 50.0).unwrap();
    assert!((lin.det - 1.0).abs() <= 1e-6, "{lin:?}");
    assert!(lin.fixed_point[0].abs() < 1e-10 && lin.fixed_point[1].abs() < 1e-10);
}

#[test]
fn flat_section_rotation_number() {
    let m = HamiltonianModel::Liouville(Liouville::flat());
    let w = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let pt0 = PhasePoint::new([0.0, 0.0], w);
    let spec = SectionSpec::angle(0, 0.0, Direction::Up);
    let sm = poincare(&m, &spec, &pt0, 200, 1e-12, 1e4).unwrap();
    let angles: Vec<f64> = sm.coords().iter().map(|c| c[0].rem_euclid(2.0 * PI)).collect();
    let rho = rotation_number(&angles).unwrap().rho;
    assert!((rho - w[1] / w[0]).abs() < 1e-9, "{rho}");
}
