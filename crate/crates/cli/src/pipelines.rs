//! The single-run pipelines. Each reads its validated section, writes its
//! artefacts through [`Output`] and returns the assertions it checked.
//! Parallel loops collect in input order so outputs do not depend on the
//! thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use mjspectra_core::action_angle::{atlas_row, kam_membership, liouville_form};
use mjspectra_core::bsm::{predict_spectrum, BsmLatticePoint, PointStatus, QuantizeParams};
use mjspectra_core::flow::{self, least_squares_slope, Projection};
use mjspectra_core::katok::{katok_report, Heading};
use mjspectra_core::larmor::{
    fiber_frequency, k1_lattice, reduced_model, reduced_spectrum, reeb_components, resonant_sep_const, ReducedModel,
    REFINEMENT_TOL,
};
use mjspectra_core::mj::{
    average_g, g_grid, linearizing_samples, parallelism, solve_conjugacy, verify_det_identity,
    verify_frequency_rescale, MjPair,
};
use mjspectra_core::models::{jacobi_from_mechanical, HamiltonianModel, Liouville, ModelSpec, PhasePoint};
use mjspectra_core::spectral::{
    assemble, default_cutoff, gap_statistics, match_spectra, solve_window_with, SpectrumWindow, WindowOptions,
};
use mjspectra_core::trig::TorusField;

use crate::config::RunConfig;
use crate::error::{in_stage, CliError};
use crate::output::{Output, Report, Timer};

pub fn run(pipeline: &str, cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    match pipeline {
        "trace" => trace(cfg, out, timer),
        "mjverify" => mjverify(cfg, out, timer),
        "actions" => actions(cfg, out, timer),
        "quantize" => quantize(cfg, out, timer),
        "oracle" => oracle(cfg, out, timer),
        "compare" => compare(cfg, out, timer),
        "gaps" => gaps(cfg, out, timer),
        "larmor" => larmor(cfg, out, timer),
        "katok" => katok(cfg, out, timer),
        other => Err(CliError::config(
            "pipeline",
            format!("`{other}` is not a single-run pipeline"),
        )),
    }
}

fn build(cfg: &RunConfig) -> Result<HamiltonianModel, CliError> {
    cfg.model().build().map_err(|e| CliError::config("model", e))
}

fn separable(cfg: &RunConfig) -> Result<Liouville, CliError> {
    liouville_form(&build(cfg)?).map_err(|e| CliError::config("model.variant", e))
}

/// Draws `x` uniformly (latitude within the chart on the sphere) and a
/// momentum direction, then scales the momentum onto `{H = energy}`.
/// Positions where the level is empty are redrawn.
fn random_level_point(model: &HamiltonianModel, rng: &mut ChaCha8Rng, energy: f64) -> Result<PhasePoint, CliError> {
    for _ in 0..1000 {
        let x2 = if model.on_sphere() {
            rng.gen_range(-1.2..1.2)
        } else {
            rng.gen_range(0.0..2.0 * PI)
        };
        let x = [rng.gen_range(0.0..2.0 * PI), x2];
        let theta: f64 = rng.gen_range(0.0..2.0 * PI);
        if let Ok(pt) = model.on_level(x, theta, energy) {
            return Ok(pt);
        }
    }
    Err(CliError::numerical(
        "start_points",
        format!("no point on the level {energy} after 1000 draws"),
    ))
}

fn trace(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let t = &cfg.trace;
    let model = build(cfg)?;
    let mut starts: Vec<PhasePoint> = t.points.iter().map(PhasePoint::from_state).collect();
    if t.random > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let e = t.energy.expect("validated");
        for _ in 0..t.random {
            starts.push(random_level_point(&model, &mut rng, e)?);
        }
    }
    let max_dt = t.max_dt.unwrap_or(f64::INFINITY);
    let runs = timer.time("integrate", || {
        starts
            .par_iter()
            .map(|pt| {
                let tr = flow::integrate_sampled(&model, pt, t.t_end, t.tol, max_dt)?;
                let sec = match &t.section {
                    Some(s) => Some(flow::poincare(&model, s, pt, t.returns, t.tol, t.max_time)?),
                    None => None,
                };
                Ok((tr, sec))
            })
            .collect::<mjspectra_core::Result<Vec<_>>>()
            .map_err(in_stage("integrate", "trace"))
    })?;
    let mut rep = Report::default();
    let mut drift: f64 = 0.0;
    let mut steps = 0;
    for (i, (tr, sec)) in runs.iter().enumerate() {
        out.csv_with(&format!("trajectory_{i:03}.csv"), |w| tr.write_csv(w))?;
        if let Some(s) = sec {
            out.csv_with(&format!("section_{i:03}.csv"), |w| s.write_csv(w))?;
        }
        drift = drift.max(tr.stats.max_energy_drift / tr.stats.drift_budget);
        steps += tr.stats.steps;
    }
    rep.metric("orbits", runs.len() as f64);
    rep.metric("steps", steps as f64);
    rep.at_most("energy_drift_over_budget", drift, 1.0);
    Ok(rep)
}

/// MJ pair on the level `energy` of a mechanical model, or the water-wave
/// pair of a metric (which carries its own level).
fn mj_pair(cfg: &RunConfig, energy: f64, section: &str) -> Result<MjPair, CliError> {
    match (cfg.model(), build(cfg)?) {
        (_, HamiltonianModel::Mechanical(m)) => {
            let jac = jacobi_from_mechanical(&m, energy).map_err(in_stage("pair", section))?;
            Ok(MjPair::new(
                HamiltonianModel::Mechanical(m),
                HamiltonianModel::JacobiMetric(jac),
                energy,
                1.0,
            ))
        }
        (
            ModelSpec::WaterWaveFromMetric {
                u,
                v,
                dispersion,
                energy,
            },
            _,
        ) => {
            let metric = Liouville::new(u.clone(), v.clone()).map_err(|e| CliError::config("model", e))?;
            let disp = dispersion.clone().unwrap_or_else(|| TorusField::constant(0.0));
            MjPair::water_wave_liouville(metric, disp, *energy).map_err(in_stage("pair", "model"))
        }
        _ => Err(CliError::config(
            "model.variant",
            "needs a mechanical or water_wave_from_metric model",
        )),
    }
}

#[derive(Serialize)]
struct OrbitRow {
    index: usize,
    x1: f64,
    x2: f64,
    p1: f64,
    p2: f64,
    h_time: f64,
    k_time: f64,
    hausdorff: f64,
}

fn mjverify(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let m = &cfg.mjverify;
    let pair = mj_pair(cfg, m.energy, "mjverify")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = (0..m.orbits)
        .map(|_| random_level_point(&pair.h, &mut rng, pair.energy_h))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = timer.time("orbits", || {
        starts
            .par_iter()
            .enumerate()
            .map(|(index, pt0)| {
                let a = flow::integrate_sampled(&pair.h, pt0, m.t_end, m.tol, m.max_dt)?;
                // K-time elapsed along the H-orbit: d tau = dt / G
                let (_, k_time) = flow::integrate_with_quadrature(&pair.h, pt0, m.t_end, m.tol, |q| {
                    Ok(1.0 / parallelism(&pair.h, &pair.k, q)?.g)
                })?;
                let b = flow::integrate_sampled(&pair.k, pt0, k_time, m.tol, m.max_dt)?;
                Ok(OrbitRow {
                    index,
                    x1: pt0.x[0],
                    x2: pt0.x[1],
                    p1: pt0.p[0],
                    p2: pt0.p[1],
                    h_time: m.t_end,
                    k_time,
                    hausdorff: flow::orbit_distance(&a, &b, Projection::Position)?,
                })
            })
            .collect::<mjspectra_core::Result<Vec<_>>>()
            .map_err(in_stage("orbits", "mjverify"))
    })?;
    out.csv("orbits.csv", &rows)?;
    let worst = rows.iter().map(|r| r.hausdorff).fold(0.0, f64::max);

    let (torus, kam, rescale) = timer
        .time("rescale", || {
            let torus = pair.torus(m.sep_const, m.signs)?;
            let kam = kam_membership(torus.frequencies(), &m.dioph);
            let mean_g = average_g(&pair, &torus, m.average_grid, m.average_grid)?;
            let fr = verify_frequency_rescale(&pair, &torus, mean_g, m.rescale_time, m.tol)?;
            Ok((torus, kam, fr))
        })
        .map_err(in_stage("rescale", "mjverify"))?;
    out.json("rescale.json", &serde_json::json!({ "kam": kam, "rescale": rescale }))?;

    let n = m.conj_grid;
    let (data, det) = timer
        .time("conjugacy", || {
            let omega = torus.frequencies();
            let g_psi = linearizing_samples(&g_grid(&pair, &torus, n, n)?, n, n, omega)?;
            let data = solve_conjugacy(&g_psi, n, n, omega, m.conj_k_max, m.det_tol)?;
            let det = verify_det_identity(&data);
            Ok((data, det))
        })
        .map_err(in_stage("conjugacy", "mjverify"))?;
    out.json(
        "conjugacy.json",
        &serde_json::json!({ "det_defect": det, "conjugacy": data }),
    )?;

    let mut rep = Report::default();
    rep.at_most("orbit_hausdorff", worst, m.hausdorff_tol);
    rep.holds("diophantine", kam.pass);
    rep.at_most("rescale_rel_err", rescale.rel_err, m.rescale_tol);
    rep.at_most("det_identity", det, m.det_tol);
    rep.metric("mean_g", data.mean_g);
    rep.metric("conjugacy_residual", data.residual);
    Ok(rep)
}

fn actions(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let a = &cfg.actions;
    let model = separable(cfg)?;
    let grid: Vec<(f64, f64)> = a
        .energies
        .iter()
        .flat_map(|e| a.sep_consts.iter().map(move |c| (*e, *c)))
        .collect();
    let results = timer.time("atlas", || {
        grid.par_iter()
            .map(|(e, c)| atlas_row(&model, *e, *c, &a.dioph))
            .collect::<Vec<_>>()
    });
    let mut rep = Report::default();
    let mut rows = Vec::new();
    for ((e, c), r) in grid.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(err) => rep.notes.push(format!("E={e} c={c}: {err}")),
        }
    }
    if rows.is_empty() {
        return Err(CliError::numerical("atlas", "no (E, c) pair yields a torus"));
    }
    out.csv("atlas.csv", &rows)?;
    rep.metric("tori", rows.len() as f64);
    rep.metric("skipped", (grid.len() - rows.len()) as f64);
    rep.metric("kam_pass", rows.iter().filter(|r| r.kam_pass).count() as f64);
    Ok(rep)
}

fn quantize_params(cfg: &RunConfig, h: f64) -> QuantizeParams {
    let q = &cfg.quantize;
    QuantizeParams {
        h,
        delta: q.delta,
        c0: q.c0,
        center_energy: q.center_energy,
        center_sep_const: q.center_sep_const.expect("validated"),
        maslov: q.maslov,
    }
}

#[derive(Serialize)]
struct PredictionRow {
    k1: i64,
    k2: i64,
    #[serde(rename = "J1p")]
    j1p: f64,
    #[serde(rename = "J2p")]
    j2p: f64,
    #[serde(rename = "E")]
    energy: f64,
    c: f64,
    #[serde(rename = "E_k")]
    e_k: f64,
    residual: f64,
    status: &'static str,
}

impl From<&BsmLatticePoint> for PredictionRow {
    fn from(p: &BsmLatticePoint) -> Self {
        PredictionRow {
            k1: p.k[0],
            k2: p.k[1],
            j1p: p.j_prime[0],
            j2p: p.j_prime[1],
            energy: p.energy,
            c: p.sep_const,
            e_k: p.e_k,
            residual: p.residual,
            status: match p.status {
                PointStatus::Ok => "ok",
                PointStatus::Dropped => "dropped",
            },
        }
    }
}

fn quantize(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let model = separable(cfg)?;
    let params = quantize_params(cfg, cfg.quantize.h);
    let pred = timer
        .time("predict", || predict_spectrum(&model, &params))
        .map_err(in_stage("predict", "quantize"))?;
    let rows: Vec<PredictionRow> = pred
        .points
        .iter()
        .chain(&pred.dropped)
        .map(PredictionRow::from)
        .collect();
    out.csv("prediction.csv", &rows)?;
    let mut rep = Report::default();
    rep.metric("points", pred.points.len() as f64);
    rep.metric("dropped", pred.dropped.len() as f64);
    rep.metric("converged_fraction", pred.converged_fraction);
    rep.metric("effective_c1", pred.effective_c1);
    rep.metric("maslov1", pred.maslov[0] as f64);
    rep.metric("maslov2", pred.maslov[1] as f64);
    rep.notes.extend(pred.dropped.iter().filter_map(|p| p.reason.clone()));
    Ok(rep)
}

/// Eigenvalue window at `h` from the `spectral` section.
fn window(cfg: &RunConfig, model: &Liouville, h: f64) -> mjspectra_core::Result<SpectrumWindow> {
    let s = &cfg.spectral;
    let center = s.center.unwrap_or(cfg.quantize.center_energy);
    let hw = s.half_width.unwrap_or_else(|| h.powf(cfg.quantize.delta));
    let m = s.m.unwrap_or_else(|| default_cutoff(model, h, center + hw));
    let problem = assemble(model, h, m)?;
    solve_window_with(
        &problem,
        center,
        hw,
        WindowOptions {
            solver: s.solver,
            keep_vectors: false,
        },
    )
}

#[derive(Serialize)]
struct WindowRow {
    j: usize,
    lambda: f64,
    residual: f64,
    gap_prev: Option<f64>,
    gap_next: Option<f64>,
}

fn write_window(out: &Output, name: &str, w: &SpectrumWindow) -> Result<(), CliError> {
    let rows: Vec<WindowRow> = w
        .gaps()
        .into_iter()
        .enumerate()
        .map(|(j, (gap_prev, gap_next))| WindowRow {
            j,
            lambda: w.eigenvalues[j],
            residual: w.residuals[j],
            gap_prev,
            gap_next,
        })
        .collect();
    out.csv(name, &rows)
}

fn oracle(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let model = separable(cfg)?;
    let w = timer
        .time("solve", || window(cfg, &model, cfg.oracle.h))
        .map_err(in_stage("solve", "spectral"))?;
    write_window(out, "window.csv", &w)?;
    let mut rep = Report::default();
    rep.metric("count", w.count() as f64);
    rep.metric("cutoff", w.m as f64);
    rep.metric("half_width", w.half_width);
    rep.at_most("max_residual", w.max_residual, cfg.spectral.residual_tol);
    Ok(rep)
}

fn compare(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let c = &cfg.compare;
    let model = separable(cfg)?;
    let runs = timer.time("predict_and_solve", || {
        c.h.par_iter()
            .map(|&h| {
                let pred = predict_spectrum(&model, &quantize_params(cfg, h))?;
                let w = window(cfg, &model, h)?;
                Ok((pred, w))
            })
            .collect::<mjspectra_core::Result<Vec<_>>>()
            .map_err(in_stage("predict_and_solve", "quantize"))
    })?;
    let mut rep = Report::default();
    let mut errors = Vec::new();
    for (i, (h, (pred, w))) in c.h.iter().zip(&runs).enumerate() {
        write_window(out, &format!("window_{i:02}.csv"), w)?;
        let m = match_spectra(&pred.eigenvalues(), &w.eigenvalues, c.match_factor * h * h);
        out.json(
            &format!("match_{i:02}.json"),
            &serde_json::json!({ "h": h, "report": m }),
        )?;
        rep.at_least(
            &format!("matched_fraction_{i:02}"),
            m.pairs.len() as f64 / pred.points.len() as f64,
            1.0,
        );
        rep.metric(&format!("max_error_{i:02}"), m.max_error);
        errors.push(m.max_error);
    }
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    rep.metric("max_error", max_error);
    // an exact lattice (flat metric) has no rate to measure
    if max_error <= EXACT_MATCH {
        rep.at_most("exact_agreement", max_error, EXACT_MATCH);
    } else if c.h.len() >= 2 && errors.iter().all(|e| *e > 0.0) {
        let xs: Vec<f64> = c.h.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        rep.at_least("error_slope", least_squares_slope(&xs, &ys).0, c.slope_min);
    }
    Ok(rep)
}

const EXACT_MATCH: f64 = 1e-12;

fn gaps(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let g = &cfg.gaps;
    let model = separable(cfg)?;
    let windows = timer.time("solve", || {
        g.h.par_iter()
            .map(|&h| window(cfg, &model, h))
            .collect::<mjspectra_core::Result<Vec<_>>>()
            .map_err(in_stage("solve", "spectral"))
    })?;
    let mut rep = Report::default();
    let mut fractions = Vec::new();
    for (i, (h, w)) in g.h.iter().zip(&windows).enumerate() {
        write_window(out, &format!("window_{i:02}.csv"), w)?;
        let stats = gap_statistics(&w.eigenvalues, h.powf(g.threshold_power)).map_err(in_stage("gaps", "gaps"))?;
        out.json(
            &format!("gaps_{i:02}.json"),
            &serde_json::json!({ "h": h, "statistics": stats }),
        )?;
        rep.metric(&format!("fraction_{i:02}"), stats.fraction);
        fractions.push(stats.fraction);
    }
    rep.holds("fraction_nondecreasing", fractions.windows(2).all(|f| f[1] >= f[0]));
    let last = *fractions.last().expect("validated nonempty");
    rep.assertions.push(crate::output::Assertion {
        name: "last_fraction".into(),
        pass: last > g.min_last_fraction,
        value: last,
        limit: g.min_last_fraction,
    });
    Ok(rep)
}

#[derive(Serialize)]
struct ProfileRow {
    psi2: f64,
    omega1: f64,
}

#[derive(Serialize)]
struct LadderRow {
    k1: f64,
    n: usize,
    energy: f64,
}

fn larmor_model(cfg: &RunConfig) -> Result<ReducedModel, CliError> {
    let l = &cfg.larmor;
    let stage = in_stage("profile", "larmor");
    if let Some(profile) = &l.profile {
        // G = 1 / w1(x2) with w = (1, 0) reproduces w1 as the fibre profile
        let g = |phi: [f64; 2]| Ok(1.0 / profile.eval(phi[1]));
        return reduced_model(g, [1.0, 0.0], (0, 1), l.base_energy, l.n_fibers, l.n_orbit).map_err(stage);
    }
    let pair = mj_pair(cfg, l.energy, "larmor")?;
    let metric = liouville_form(&pair.k).map_err(|e| CliError::config("model.variant", e))?;
    let ratio = (l.ratio[0], l.ratio[1]);
    let [lo, hi] = l.sep_bracket.expect("validated");
    let c = resonant_sep_const(&metric, pair.energy_k, ratio, lo, hi).map_err(&stage)?;
    let torus = pair.torus(c, l.signs).map_err(&stage)?;
    fiber_frequency(&pair, &torus, ratio, l.n_fibers, l.n_orbit).map_err(stage)
}

fn larmor(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let l = &cfg.larmor;
    let model = timer.time("profile", || larmor_model(cfg))?;
    let n = model.samples.len();
    let profile: Vec<ProfileRow> = model
        .samples
        .iter()
        .enumerate()
        .map(|(j, v)| ProfileRow {
            psi2: 2.0 * PI * j as f64 / n as f64,
            omega1: *v,
        })
        .collect();
    out.csv("profile.csv", &profile)?;
    let reeb = reeb_components(&model.omega1).map_err(in_stage("reeb", "larmor"))?;
    out.json("reeb.json", &serde_json::json!({ "model": model, "reeb": reeb }))?;
    let k1s = l.k1.clone().unwrap_or_else(|| k1_lattice(l.h, l.delta));
    let ladders = timer
        .time("ladders", || {
            k1s.par_iter()
                .map(|k1| reduced_spectrum(&model, l.h, &[*k1], l.modes, l.cutoff.expect("validated")))
                .collect::<mjspectra_core::Result<Vec<_>>>()
        })
        .map_err(in_stage("ladders", "larmor"))?;
    let rows: Vec<LadderRow> = ladders
        .iter()
        .flatten()
        .flat_map(|lad| {
            lad.energies.iter().enumerate().map(move |(n, e)| LadderRow {
                k1: lad.k1,
                n,
                energy: *e,
            })
        })
        .collect();
    out.csv("ladders.csv", &rows)?;
    let mut rep = Report::default();
    rep.metric("ladders", k1s.len() as f64);
    rep.metric("levels", rows.len() as f64);
    rep.metric("wells", reeb.wells.len() as f64);
    rep.metric(
        "profile_min",
        model.samples.iter().cloned().fold(f64::INFINITY, f64::min),
    );
    rep.metric(
        "profile_max",
        model.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    rep.at_most("refinement_change", model.refinement_change, REFINEMENT_TOL);
    Ok(rep)
}

#[derive(Serialize)]
struct BreakingRow {
    q2: f64,
    defect: f64,
}

fn katok(cfg: &RunConfig, out: &Output, timer: &mut Timer) -> Result<Report, CliError> {
    let k = &cfg.katok;
    let alpha = match cfg.model() {
        ModelSpec::KatokRanders { katok_alpha } => *katok_alpha,
        _ => return Err(CliError::config("model.variant", "katok needs the katok_randers model")),
    };
    let r = timer
        .time("report", || katok_report(alpha, &k.latitudes))
        .map_err(in_stage("report", "katok"))?;
    out.json("katok_report.json", &r)?;
    for (heading, name) in [
        (Heading::East, "breaking_east.csv"),
        (Heading::West, "breaking_west.csv"),
    ] {
        let rows: Vec<BreakingRow> = r
            .breaking
            .iter()
            .filter(|b| b.heading == heading)
            .map(|b| BreakingRow {
                q2: b.latitude,
                defect: b.defect,
            })
            .collect();
        out.csv(name, &rows)?;
    }
    let mut rep = Report::default();
    for (o, tag) in r.orbits.iter().zip(["east", "west"]) {
        rep.at_most(&format!("period_{tag}"), o.relative_defect, k.period_tol);
        rep.metric(&format!("period_{tag}"), o.period);
    }
    for (a, tag) in r.angles.iter().zip(["east", "west"]) {
        rep.at_most(&format!("angle_{tag}"), a.defect, k.angle_tol);
        rep.at_most(&format!("det_{tag}"), (a.det - 1.0).abs(), k.det_tol);
        rep.metric(&format!("angle_{tag}"), a.measured);
    }
    rep.metric("max_breaking", r.breaking.iter().map(|b| b.defect).fold(0.0, f64::max));
    Ok(rep)
}
