//! Acceptance criteria A1-A8. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails. Lines go straight to stderr so they
//! show in the log without `--nocapture`.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mjspectra_core::action_angle::{actions, ikam_det, kam_membership, DiophantineParams, TorusAngles};
use mjspectra_core::bsm::{predict_spectrum, QuantizeParams};
use mjspectra_core::flow::{self, Projection};
use mjspectra_core::katok::{equator_orbits, poincare_angles};
use mjspectra_core::larmor::harmonic_spacing;
use mjspectra_core::mj::{
    average_g, g_grid, linearizing_samples, solve_conjugacy, verify_det_identity, verify_frequency_rescale, MjPair,
};
use mjspectra_core::models::{
    metric_to_depth, HamiltonianModel, KatokRanders, Liouville, Mechanical, PhasePoint, WaterWave,
};
use mjspectra_core::spectral::{
    assemble, default_cutoff, gap_statistics, larmor_spectrum, match_spectra, solve_window_with, WindowOptions,
};
use mjspectra_core::trig::{FieldTerm, TorusField, TrigSeries};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

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
    ])
    .unwrap()
}

fn a1() -> Outcome {
    let v = potential();
    let pair = MjPair::mechanical_jacobi(v.clone(), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tol = 1e-11;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
        let th: f64 = rng.gen_range(0.0..2.0 * PI);
        let r = (2.0 * (1.0 - v.eval(x))).sqrt();
        let pt0 = PhasePoint::new(x, [r * th.cos(), r * th.sin()]);
        let t_end = 10.0;
        let mech = flow::integrate_sampled(&pair.h, &pt0, t_end, tol, 1e-3).unwrap();
        // Jacobi time is s = int (E - V) dt along the mechanical orbit
        let (_, s_end) = flow::integrate_with_quadrature(&pair.h, &pt0, t_end, tol, |p| Ok(1.0 - v.eval(p.x))).unwrap();
        let jac = flow::integrate_sampled(&pair.k, &pt0, s_end, tol, 1e-3).unwrap();
        let d = flow::orbit_distance(&mech, &jac, Projection::Position).unwrap();
        worst = worst.max(d);
    }
    outcome(
        worst <= 1e-5,
        format!("max position Hausdorff distance {worst:.2e} over 20 arcs (limit 1e-5)"),
    )
}

fn a2() -> Outcome {
    let pair = MjPair::mechanical_jacobi(potential(), 1.0).unwrap();
    let torus = pair.torus(-0.1, [1.0, 1.0]).unwrap();
    let omega = torus.frequencies();
    let kam = kam_membership(omega, &DiophantineParams::new(1e-3, 2.0, 64).unwrap());
    let mean_g = average_g(&pair, &torus, 64, 64).unwrap();
    let fr = verify_frequency_rescale(&pair, &torus, mean_g, 3000.0, 1e-11).unwrap();
    let n = 192;
    let g_phi = g_grid(&pair, &torus, n, n).unwrap();
    let g_psi = linearizing_samples(&g_phi, n, n, omega).unwrap();
    let data = solve_conjugacy(&g_psi, n, n, omega, 64, 1e-8).unwrap();
    let det = verify_det_identity(&data);
    outcome(
        kam.pass && fr.rel_err <= 1e-4 && det <= 1e-8,
        format!(
            "rescale rel_err {:.2e} (limit 1e-4), det identity defect {det:.2e} at K_max=64 (limit 1e-8), diophantine {}",
            fr.rel_err, kam.pass
        ),
    )
}

fn example_liouville() -> Liouville {
    Liouville::new(TrigSeries::cosine(1.0, 0.3), TrigSeries::cosine(0.0, 0.2)).unwrap()
}

struct LevelRun {
    h: f64,
    predicted: usize,
    matched: usize,
    max_error: f64,
    gap_fraction: f64,
}

fn a3_runs() -> Vec<LevelRun> {
    let model = example_liouville();
    [0.05, 0.025, 0.0125]
        .iter()
        .map(|&h| {
            let params = QuantizeParams {
                h,
                delta: 0.5,
                c0: 0.3,
                center_energy: 1.0,
                center_sep_const: -0.45,
                maslov: None,
            };
            let pred = predict_spectrum(&model, &params).unwrap();
            let hw = h.sqrt();
            let m = default_cutoff(&model, h, 1.0 + hw);
            let problem = assemble(&model, h, m).unwrap();
            let win = solve_window_with(&problem, 1.0, hw, WindowOptions::default()).unwrap();
            let rep = match_spectra(&pred.eigenvalues(), &win.eigenvalues, h * h);
            let gaps = gap_statistics(&win.eigenvalues, h.powi(3)).unwrap();
            LevelRun {
                h,
                predicted: pred.points.len(),
                matched: rep.pairs.len(),
                max_error: rep.max_error,
                gap_fraction: gaps.fraction,
            }
        })
        .collect()
}

fn a3(runs: &[LevelRun]) -> Outcome {
    let xs: Vec<f64> = runs.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = runs.iter().map(|r| r.max_error.ln()).collect();
    let (slope, _) = flow::least_squares_slope(&xs, &ys);
    let all = runs.iter().all(|r| r.predicted > 0 && r.matched == r.predicted);
    let table: Vec<String> = runs
        .iter()
        .map(|r| format!("h={} {}/{} err {:.2e}", r.h, r.matched, r.predicted, r.max_error))
        .collect();
    outcome(
        all && slope >= 1.8,
        format!("{}; slope {slope:.3} (limit 1.8)", table.join(", ")),
    )
}

fn a4(runs: &[LevelRun]) -> Outcome {
    let f: Vec<f64> = runs.iter().map(|r| r.gap_fraction).collect();
    let monotone = f.windows(2).all(|w| w[1] >= w[0]);
    let last = *f.last().unwrap();
    outcome(
        monotone && last > 0.5,
        format!("near-degenerate fractions {f:?} at threshold h^3 (nondecreasing, last > 0.5)"),
    )
}

fn a5() -> Outcome {
    let (tp, tm) = equator_orbits(0.5).unwrap();
    let (ap, am) = poincare_angles(0.5).unwrap();
    let periods = tp.relative_defect <= 1e-6 && tm.relative_defect <= 1e-6;
    let angles = ap.defect <= 1e-4 && am.defect <= 1e-4;
    let dets = (ap.det - 1.0).abs() <= 1e-6 && (am.det - 1.0).abs() <= 1e-6;
    outcome(
        periods && angles && dets,
        format!(
            "T+ {:.8} T- {:.8} (rel defects {:.1e}, {:.1e}); angle defects {:.1e}, {:.1e}; det defects {:.1e}, {:.1e}",
            tp.period,
            tm.period,
            tp.relative_defect,
            tm.relative_defect,
            ap.defect,
            am.defect,
            (ap.det - 1.0).abs(),
            (am.det - 1.0).abs()
        ),
    )
}

/// Direct `|<k, w>| |k|_1^sigma >= c` over the full box `|k|_inf <= k_max`.
fn brute_force_kam(omega: [f64; 2], c: f64, sigma: f64, k_max: i64) -> bool {
    for k1 in -k_max..=k_max {
        for k2 in -k_max..=k_max {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let norm = (k1.abs() + k2.abs()) as f64;
            let v = (k1 as f64 * omega[0] + k2 as f64 * omega[1]).abs() * norm.powf(sigma);
            if v < c {
                return false;
            }
        }
    }
    true
}

fn a6() -> Outcome {
    let flat = Liouville::flat();
    let mut worst: f64 = 0.0;
    for (e, c) in [(1.0, -0.64), (1.0, -0.3), (2.0, -1.1), (0.5, -0.1)] {
        let j = actions(&flat, e, c).unwrap();
        let exact = -8.0 * (j[0] * j[0] + j[1] * j[1]);
        worst = worst.max((ikam_det(&flat, e, c).unwrap() - exact).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = DiophantineParams::new(1e-2, 2.0, 50).unwrap();
    let mut agree = 0;
    let mut passes = 0;
    for _ in 0..1000 {
        let omega = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let fast = kam_membership(omega, &params).pass;
        passes += fast as usize;
        if fast == brute_force_kam(omega, params.dioph_c, params.sigma, 50) {
            agree += 1;
        }
    }
    outcome(
        worst <= 1e-6 && agree == 1000,
        format!("ikam_det max defect {worst:.2e} (limit 1e-6); KAM agreement {agree}/1000 ({passes} pass)"),
    )
}

fn a7() -> Outcome {
    let h = 0.01;
    let w = 1.3;
    let mut worst: f64 = 0.0;
    for k1 in [-0.02, 0.0, 0.01, 0.03] {
        // levels within 0.05 of the bottom w k1 of the ladder
        let cutoff = w * k1 + 0.05;
        let e = larmor_spectrum(&TrigSeries::constant(w), k1, h, 64, cutoff).unwrap();
        let mut exact: Vec<f64> = (-40i64..=40)
            .map(|m| 0.5 * h * h * (m * m) as f64 + w * k1)
            .filter(|v| *v <= cutoff)
            .collect();
        exact.sort_by(f64::total_cmp);
        if e.len() != exact.len() {
            return outcome(
                false,
                format!("constant profile: {} levels, expected {}", e.len(), exact.len()),
            );
        }
        for (a, b) in e.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    let profile = TrigSeries::cosine(1.0, 1.0);
    let ladder = larmor_spectrum(&profile, 1.0, h, 128, 0.06).unwrap();
    let harmonic = harmonic_spacing(&profile, 1.0, h).unwrap();
    let spacings: Vec<f64> = ladder.windows(2).map(|p| p[1] - p[0]).collect();
    let dev = spacings
        .iter()
        .map(|s| (s - harmonic).abs() / harmonic)
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-12 && spacings.len() >= 3 && dev <= 0.05,
        format!(
            "constant profile max error {worst:.2e} (limit 1e-12); {} ladder spacings within {:.2}% of {harmonic:.4} (limit 5%)",
            spacings.len(),
            100.0 * dev
        ),
    )
}

fn fd_gradient_defect(model: &HamiltonianModel, pt: &PhasePoint) -> f64 {
    let g = model.grad(pt).unwrap();
    let exact = [g.dx[0], g.dx[1], g.dp[0], g.dp[1]];
    let y = pt.state();
    let step = 1e-6;
    (0..4)
        .map(|i| {
            let mut a = y;
            let mut b = y;
            a[i] += step;
            b[i] -= step;
            let fd = (model.eval(&PhasePoint::from_state(&a)).unwrap()
                - model.eval(&PhasePoint::from_state(&b)).unwrap())
                / (2.0 * step);
            (fd - exact[i]).abs() / exact[i].abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

fn a8() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lv = example_liouville();
    let models = vec![
        HamiltonianModel::Liouville(lv.clone()),
        HamiltonianModel::Mechanical(Mechanical::flat(potential())),
        HamiltonianModel::JacobiMetric(
            mjspectra_core::models::jacobi_from_mechanical(&Mechanical::flat(potential()), 1.0).unwrap(),
        ),
        HamiltonianModel::WaterWave(
            WaterWave::new(
                TorusField::new(vec![
                    FieldTerm {
                        k: [0, 0],
                        a: 1.0,
                        b: 0.0,
                    },
                    FieldTerm {
                        k: [1, 1],
                        a: 0.2,
                        b: 0.1,
                    },
                ])
                .unwrap(),
                TorusField::constant(0.05),
            )
            .unwrap(),
        ),
        HamiltonianModel::WaterWave(
            WaterWave::from_liouville_metric(lv.clone(), TorusField::constant(0.0), 0.5).unwrap(),
        ),
        HamiltonianModel::KatokRanders(KatokRanders::new(0.5).unwrap()),
    ];
    let mut grad_worst: f64 = 0.0;
    for m in &models {
        for _ in 0..100 {
            let x2 = if m.on_sphere() {
                rng.gen_range(-1.2..1.2)
            } else {
                rng.gen_range(0.0..2.0 * PI)
            };
            let x = [rng.gen_range(0.0..2.0 * PI), x2];
            let p = [rng.gen_range(0.3..1.5), rng.gen_range(-1.5..-0.3)];
            grad_worst = grad_worst.max(fd_gradient_defect(m, &PhasePoint::new(x, p)));
        }
    }
    if grad_worst > 1e-6 {
        failures.push("gradient");
    }

    let lm = HamiltonianModel::Liouville(lv.clone());
    let pt0 = PhasePoint::new([0.3, 1.1], [0.7, 0.4]);
    let tr = flow::integrate(&lm, &pt0, 100.0, 1e-10).unwrap();
    let f0 = lm.liouville_integral(&pt0).unwrap();
    let f_drift = tr
        .samples
        .iter()
        .map(|s| (lm.liouville_integral(&s.pt).unwrap() - f0).abs())
        .fold(0.0, f64::max);
    let e_drift = tr.stats.max_energy_drift;
    if f_drift > 1e-8 || e_drift > tr.stats.drift_budget {
        failures.push("conservation");
    }

    let problem = assemble(&lv, 0.05, 60).unwrap();
    if !(problem.mass_min_eig > 0.0) {
        failures.push("mass matrix");
    }

    let ww = WaterWave::new(
        TorusField::new(vec![
            FieldTerm {
                k: [0, 0],
                a: 1.0,
                b: 0.0,
            },
            FieldTerm {
                k: [1, 0],
                a: 0.3,
                b: 0.0,
            },
            FieldTerm {
                k: [0, 1],
                a: 0.0,
                b: 0.2,
            },
        ])
        .unwrap(),
        TorusField::constant(0.1),
    )
    .unwrap();
    let (n, energy) = (16, 0.8);
    let g = ww.depth_to_metric(energy, n, n).unwrap();
    let mu = vec![0.1; n * n];
    let depth = metric_to_depth(&g, &mu, energy).unwrap();
    let mut trip: f64 = 0.0;
    for i2 in 0..n {
        for i1 in 0..n {
            let x = [2.0 * PI * i1 as f64 / n as f64, 2.0 * PI * i2 as f64 / n as f64];
            trip = trip.max((depth[i1 + n * i2] - ww.depth_at(x).unwrap()).abs());
        }
    }
    if trip > 1e-10 {
        failures.push("depth round trip");
    }

    let pair = MjPair::mechanical_jacobi(potential(), 1.0).unwrap();
    let torus: TorusAngles = pair.torus(-0.1, [1.0, 1.0]).unwrap();
    let omega = torus.frequencies();
    let nn = 96;
    let g_psi = linearizing_samples(&g_grid(&pair, &torus, nn, nn).unwrap(), nn, nn, omega).unwrap();
    let data = solve_conjugacy(&g_psi, nn, nn, omega, 24, 1e-6).unwrap();
    let det_vs_res = (verify_det_identity(&data) - data.residual).abs();
    if det_vs_res > 1e-12 {
        failures.push("det identity");
    }

    outcome(
        failures.is_empty(),
        format!(
            "gradient {grad_worst:.1e}, F drift {f_drift:.1e}, energy drift {e_drift:.1e}, B min eig {:.3}, depth round trip {trip:.1e}, det-residual gap {det_vs_res:.1e}; failing: {failures:?}",
            problem.mass_min_eig
        ),
    )
}

fn say(line: String) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn report(name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = run();
    let el = t0.elapsed();
    let pass = o.pass && el <= limit;
    say(format!(
        "{name} {} {} [{:.1} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        el.as_secs_f64(),
        limit.as_secs()
    ));
    pass
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let mut ok = Vec::new();
    ok.push(report("A1", s(60), a1));
    ok.push(report("A2", s(60), a2));
    let t0 = Instant::now();
    let runs = a3_runs();
    let solve_time = t0.elapsed();
    ok.push(report("A3", s(900).saturating_sub(solve_time), || a3(&runs)));
    ok.push(report("A4", s(900).saturating_sub(solve_time), || a4(&runs)));
    ok.push(report("A5", s(30), a5));
    ok.push(report("A6", s(30), a6));
    ok.push(report("A7", s(30), a7));
    ok.push(report("A8", s(300), a8));
    say(format!("spectral solves for A3/A4 took {:.1} s", solve_time.as_secs_f64()));
    assert!(ok.iter().all(|p| *p), "acceptance failures: {ok:?}");
}
