use std::f64::consts::PI;

use proptest::prelude::*;

use mjspectra_core::models::{
    depth_from_radius, jacobi_from_mechanical, metric_to_depth, HamiltonianModel, KatokRanders, Liouville, Mechanical,
    PhasePoint, WaterWave,
};
use mjspectra_core::trig::{FieldTerm, TorusField, TrigSeries};

fn potential() -> TorusField {
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
        FieldTerm {
            k: [1, -1],
            a: 0.0,
            b: 0.05,
        },
    ])
    .unwrap()
}

fn liouville() -> Liouville {
    Liouville::new(
        TrigSeries::new(vec![1.0, 0.3], vec![0.0, 0.1]).unwrap(),
        TrigSeries::cosine(0.0, 0.2),
    )
    .unwrap()
}

fn models() -> Vec<HamiltonianModel> {
    vec![
        HamiltonianModel::Liouville(liouville()),
        HamiltonianModel::Mechanical(Mechanical::flat(potential())),
        HamiltonianModel::JacobiMetric(jacobi_from_mechanical(&Mechanical::flat(potential()), 1.0).unwrap()),
        HamiltonianModel::WaterWave(
            WaterWave::new(
                TorusField::new(vec![
                    FieldTerm {
                        k: [0, 0],
                        a: 1.2,
                        b: 0.0,
                    },
                    FieldTerm {
                        k: [2, 1],
                        a: 0.3,
                        b: -0.1,
                    },
                ])
                .unwrap(),
                TorusField::constant(0.02),
            )
            .unwrap(),
        ),
        HamiltonianModel::WaterWave(
            WaterWave::from_liouville_metric(liouville(), TorusField::constant(0.01), 0.6).unwrap(),
        ),
        HamiltonianModel::KatokRanders(KatokRanders::new(-0.4).unwrap()),
    ]
}

fn fd_defect(model: &HamiltonianModel, pt: &PhasePoint) -> f64 {
    let g = model.grad(pt).unwrap();
    let exact = [g.dx[0], g.dx[1], g.dp[0], g.dp[1]];
    let y = pt.state();
    let step = 1e-6;
    (0..4)
        .map(|i| {
            let (mut a, mut b) = (y, y);
            a[i] += step;
            b[i] -= step;
            let fd = (model.eval(&PhasePoint::from_state(&a)).unwrap()
                - model.eval(&PhasePoint::from_state(&b)).unwrap())
                / (2.0 * step);
            (fd - exact[i]).abs() / exact[i].abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_match_finite_differences(
        x1 in 0.0..2.0 * PI,
        x2 in -1.3f64..1.3,
        p1 in 0.2f64..2.0,
        p2 in -2.0f64..-0.2,
    ) {
        for m in models() {
            let pt = PhasePoint::new([x1, x2], [p1, p2]);
            prop_assert!(fd_defect(&m, &pt) <= 1e-6, "{}", m.name());
        }
    }

    #[test]
    fn katok_equator_value_is_exact(alpha in -0.99f64..0.99, p1 in -5.0f64..5.0, x1 in 0.0..2.0 * PI) {
        let m = HamiltonianModel::KatokRanders(KatokRanders::new(alpha).unwrap());
        let v = m.eval(&PhasePoint::new([x1, 0.0], [p1, 0.0])).unwrap();
        prop_assert_eq!(v, p1.abs() + alpha * p1);
    }

    #[test]
    fn water_wave_radius_increases_with_energy(x1 in 0.0..2.0 * PI, x2 in 0.0..2.0 * PI) {
        let HamiltonianModel::WaterWave(w) = &models()[3] else { unreachable!() };
        let mut last = 0.0;
        for i in 1..40 {
            let r = w.radius([x1, x2], 0.05 * i as f64).unwrap();
            prop_assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn depth_metric_round_trip(d in 0.2f64..3.0, mu in 0.0f64..0.2, e in 0.1f64..2.0) {
        let w = WaterWave::new(TorusField::constant(d), TorusField::constant(mu)).unwrap();
        let g = w.depth_to_metric(e, 4, 4).unwrap();
        let back = metric_to_depth(&g, &[mu; 16], e).unwrap();
        prop_assert!(back.iter().all(|b| (b - d).abs() <= 1e-10 * d.max(1.0)));
    }
}

#[test]
fn liouville_integral_is_conserved() {
    let m = HamiltonianModel::Liouville(liouville());
    let pt0 = PhasePoint::new([0.2, 2.0], [0.8, -0.3]);
    let tr = mjspectra_core::flow::integrate(&m, &pt0, 100.0, 1e-10).unwrap();
    let f0 = m.liouville_integral(&pt0).unwrap();
    for s in &tr.samples {
        assert!((m.liouville_integral(&s.pt).unwrap() - f0).abs() <= 1e-8);
    }
}

#[test]
fn depth_from_metric_model_realises_the_metric() {
    let l = liouville();
    let w = WaterWave::from_liouville_metric(l.clone(), TorusField::constant(0.0), 0.6).unwrap();
    for x in [[0.1, 0.2], [2.0, 4.0], [5.5, 1.0]] {
        let r = w.radius(x, 0.6).unwrap();
        assert!((r * r - l.weight(x)).abs() < 1e-10);
        let d = depth_from_radius(r, 0.0, 0.6).unwrap();
        assert!((d - w.depth_at(x).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn katok_symbol_is_not_reversible() {
    let m = HamiltonianModel::KatokRanders(KatokRanders::new(0.5).unwrap());
    assert!(!m.is_even_in_momentum());
    let pt = PhasePoint::new([1.0, 0.4], [0.7, 0.2]);
    assert!((m.eval(&pt).unwrap() - m.eval(&pt.reversed()).unwrap()).abs() > 0.5);
}
