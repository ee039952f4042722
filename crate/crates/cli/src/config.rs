//! Run configuration: TOML schema, defaults, validation and hashing.
//!
//! Every section has documented defaults; unknown keys are rejected so that
//! typos surface as configuration errors rather than silently ignored
//! parameters. Semantic checks run before any computation and report the
//! dotted path of the offending field.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mjspectra_core::action_angle::DiophantineParams;
use mjspectra_core::flow::SectionSpec;
use mjspectra_core::models::ModelSpec;
use mjspectra_core::spectral::Solver;
use mjspectra_core::trig::TrigSeries;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the pipeline named on the command line when present.
    #[serde(default)]
    pub pipeline: Option<String>,
    /// Seed for randomised sampling (trace and mjverify start points).
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub mjverify: MjVerifyConfig,
    #[serde(default)]
    pub actions: ActionsConfig,
    #[serde(default)]
    pub quantize: QuantizeConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub gaps: GapsConfig,
    #[serde(default)]
    pub larmor: LarmorConfig,
    #[serde(default)]
    pub katok: KatokConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub t_end: f64,
    pub tol: f64,
    /// Densify samples so consecutive rows are at most this far apart.
    pub max_dt: Option<f64>,
    /// Explicit start points `[x1, x2, p1, p2]`.
    pub points: Vec<[f64; 4]>,
    /// Additional seeded start points on `{H = energy}`.
    pub random: usize,
    pub energy: Option<f64>,
    pub section: Option<SectionSpec>,
    pub returns: usize,
    pub max_time: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            t_end: 10.0,
            tol: 1e-10,
            max_dt: None,
            points: Vec::new(),
            random: 0,
            energy: None,
            section: None,
            returns: 100,
            max_time: 1e4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MjVerifyConfig {
    /// Level of `H`; ignored for `water_wave_from_metric`, which carries its own.
    pub energy: f64,
    pub orbits: usize,
    pub t_end: f64,
    pub tol: f64,
    pub max_dt: f64,
    pub hausdorff_tol: f64,
    pub sep_const: f64,
    pub signs: [f64; 2],
    pub dioph: DiophantineParams,
    pub average_grid: usize,
    pub rescale_time: f64,
    pub rescale_tol: f64,
    pub conj_grid: usize,
    pub conj_k_max: u32,
    pub det_tol: f64,
}

impl Default for MjVerifyConfig {
    fn default() -> Self {
        MjVerifyConfig {
            energy: 1.0,
            orbits: 20,
            t_end: 10.0,
            tol: 1e-11,
            max_dt: 1e-3,
            hausdorff_tol: 1e-5,
            sep_const: -0.1,
            signs: [1.0, 1.0],
            dioph: DiophantineParams {
                dioph_c: 1e-3,
                sigma: 2.0,
                k_max: 64,
            },
            average_grid: 64,
            rescale_time: 3000.0,
            rescale_tol: 1e-4,
            conj_grid: 192,
            conj_k_max: 64,
            det_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionsConfig {
    pub energies: Vec<f64>,
    pub sep_consts: Vec<f64>,
    pub dioph: DiophantineParams,
}

impl Default for ActionsConfig {
    fn default() -> Self {
        ActionsConfig {
            energies: vec![1.0],
            sep_consts: Vec::new(),
            dioph: DiophantineParams {
                dioph_c: 1e-3,
                sigma: 2.0,
                k_max: 64,
            },
        }
    }
}

/// Lattice parameters shared by `quantize` and `compare`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeConfig {
    pub h: f64,
    pub delta: f64,
    pub c0: f64,
    pub center_energy: f64,
    pub center_sep_const: Option<f64>,
    pub maslov: Option<[u8; 2]>,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig {
            h: 0.05,
            delta: 0.5,
            c0: 1.0,
            center_energy: 1.0,
            center_sep_const: None,
            maslov: None,
        }
    }
}

/// Eigenvalue window shared by `oracle`, `compare` and `gaps`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Window centre; defaults to `quantize.center_energy`.
    pub center: Option<f64>,
    /// Half width; defaults to `h^quantize.delta`.
    pub half_width: Option<f64>,
    /// Fourier cutoff; defaults to a resolution estimate for the window top.
    pub m: Option<usize>,
    pub solver: Solver,
    /// Bound on the relative eigen-residual of every returned pair.
    pub residual_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            center: None,
            half_width: None,
            m: None,
            solver: Solver::Separable,
            residual_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub h: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { h: 0.05 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub h: Vec<f64>,
    /// Matching tolerance is `match_factor h^2`.
    pub match_factor: f64,
    /// Minimal log-log slope of the max matched error in `h`.
    pub slope_min: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            h: vec![0.05, 0.025, 0.0125],
            match_factor: 1.0,
            slope_min: 1.8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapsConfig {
    pub h: Vec<f64>,
    /// Near-degeneracy threshold is `h^threshold_power`.
    pub threshold_power: f64,
    /// Required fraction at the smallest `h`.
    pub min_last_fraction: f64,
}

impl Default for GapsConfig {
    fn default() -> Self {
        GapsConfig {
            h: vec![0.05, 0.025, 0.0125],
            threshold_power: 3.0,
            min_last_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LarmorConfig {
    /// Explicit fibre profile `w1(x2)`; bypasses the resonant torus search.
    pub profile: Option<TrigSeries>,
    /// Energy added to every ladder when `profile` is given.
    pub base_energy: f64,
    /// Level of `H` for the resonant torus search.
    pub energy: f64,
    /// Resonance `w2 / w1 = p / q` as `[p, q]`.
    pub ratio: [i64; 2],
    /// Separation constants bracketing the resonance.
    pub sep_bracket: Option<[f64; 2]>,
    pub signs: [f64; 2],
    pub n_fibers: usize,
    pub n_orbit: usize,
    pub h: f64,
    /// Fibre momenta `k1 = 2 pi h n`, `|k1| <= h^delta`, unless `k1` is given.
    pub delta: f64,
    pub k1: Option<Vec<f64>>,
    pub modes: usize,
    /// Absolute energy cutoff of every ladder.
    pub cutoff: Option<f64>,
}

impl Default for LarmorConfig {
    fn default() -> Self {
        LarmorConfig {
            profile: None,
            base_energy: 0.0,
            energy: 1.0,
            ratio: [1, 1],
            sep_bracket: None,
            signs: [1.0, 1.0],
            n_fibers: 16,
            n_orbit: 32,
            h: 0.01,
            delta: 0.5,
            k1: None,
            modes: 128,
            cutoff: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KatokConfig {
    pub latitudes: Vec<f64>,
    pub period_tol: f64,
    pub angle_tol: f64,
    pub det_tol: f64,
}

impl Default for KatokConfig {
    fn default() -> Self {
        KatokConfig {
            latitudes: (0..=14).map(|i| 0.1 * i as f64).collect(),
            period_tol: 1e-6,
            angle_tol: 1e-4,
            det_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub pipeline: String,
    /// Dotted path of the swept key, e.g. `model.katok_alpha`.
    pub axis: String,
    pub values: Vec<toml::Value>,
}

/// Parsed configuration with the verbatim text and its hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub text: String,
    pub hash: String,
    pub value: toml::Value,
    pub cfg: RunConfig,
}

pub fn hash_text(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse(text: String) -> Result<Loaded, CliError> {
    let value: toml::Value = toml::from_str(&text).map_err(|e| CliError::config("(syntax)", e.message()))?;
    let de = toml::Deserializer::new(&text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { "(root)" } else { &path }, e.inner().message())
    })?;
    Ok(Loaded {
        hash: hash_text(&text),
        text,
        value,
        cfg,
    })
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(path, format!("{v} must be positive and finite")))
    }
}

fn tolerance(path: &str, v: f64) -> Result<(), CliError> {
    if (1e-13..=1e-6).contains(&v) {
        Ok(())
    } else {
        Err(CliError::config(path, format!("{v} outside [1e-13, 1e-6]")))
    }
}

fn h_value(path: &str, h: f64) -> Result<(), CliError> {
    if h > 0.0 && h <= 0.5 {
        Ok(())
    } else {
        Err(CliError::config(path, format!("{h} not in (0, 0.5]")))
    }
}

fn h_list(path: &str, hs: &[f64]) -> Result<(), CliError> {
    if hs.is_empty() {
        return Err(CliError::config(path, "empty list"));
    }
    for (i, h) in hs.iter().enumerate() {
        h_value(&format!("{path}[{i}]"), *h)?;
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::config(path, "values must be strictly decreasing"));
    }
    Ok(())
}

fn dioph(path: &str, d: &DiophantineParams) -> Result<(), CliError> {
    d.validate().map_err(|e| CliError::config(path, e.to_string()))
}

impl QuantizeConfig {
    pub fn validate(&self, needs_h: bool) -> Result<(), CliError> {
        if needs_h {
            h_value("quantize.h", self.h)?;
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(CliError::config(
                "quantize.delta",
                format!("{} not in (0, 1]", self.delta),
            ));
        }
        positive("quantize.c0", self.c0)?;
        positive("quantize.center_energy", self.center_energy)?;
        match self.center_sep_const {
            Some(c) if c.is_finite() => {}
            Some(c) => {
                return Err(CliError::config(
                    "quantize.center_sep_const",
                    format!("{c} is not finite"),
                ))
            }
            None => return Err(CliError::config("quantize.center_sep_const", "required")),
        }
        if let Some(m) = self.maslov {
            if m.iter().any(|v| *v > 3) {
                return Err(CliError::config("quantize.maslov", "entries must lie in 0..=3"));
            }
        }
        Ok(())
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(c) = self.center {
            positive("spectral.center", c)?;
        }
        if let Some(w) = self.half_width {
            positive("spectral.half_width", w)?;
        }
        positive("spectral.residual_tol", self.residual_tol)?;
        if let Some(m) = self.m {
            if m < 8 {
                return Err(CliError::config("spectral.m", format!("{m} below 8")));
            }
        }
        Ok(())
    }
}

/// Checks every field the named pipeline reads.
pub fn validate(cfg: &RunConfig, pipeline: &str) -> Result<(), CliError> {
    if let Some(p) = &cfg.pipeline {
        if p != pipeline {
            return Err(CliError::config(
                "pipeline",
                format!("config names `{p}`, command line `{pipeline}`"),
            ));
        }
    }
    let needs_model = !(pipeline == "sweep" || (pipeline == "larmor" && cfg.larmor.profile.is_some()));
    if needs_model {
        match &cfg.model {
            Some(m) => {
                m.build().map_err(|e| CliError::config("model", e.to_string()))?;
            }
            None => return Err(CliError::config("model", "required")),
        }
    }
    match pipeline {
        "trace" => {
            let t = &cfg.trace;
            positive("trace.t_end", t.t_end)?;
            tolerance("trace.tol", t.tol)?;
            if let Some(d) = t.max_dt {
                positive("trace.max_dt", d)?;
            }
            if t.points.is_empty() && t.random == 0 {
                return Err(CliError::config(
                    "trace.points",
                    "no start points (set points or random)",
                ));
            }
            if t.random > 0 && t.energy.is_none() {
                return Err(CliError::config("trace.energy", "required when random > 0"));
            }
            for (i, p) in t.points.iter().enumerate() {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(CliError::config(&format!("trace.points[{i}]"), "non-finite entry"));
                }
            }
            if let Some(s) = &t.section {
                if s.coord > 3 {
                    return Err(CliError::config(
                        "trace.section.coord",
                        format!("{} not in 0..=3", s.coord),
                    ));
                }
                if t.returns == 0 {
                    return Err(CliError::config("trace.returns", "must be positive"));
                }
                positive("trace.max_time", t.max_time)?;
            }
        }
        "mjverify" => {
            let m = &cfg.mjverify;
            positive("mjverify.energy", m.energy)?;
            if m.orbits == 0 {
                return Err(CliError::config("mjverify.orbits", "must be positive"));
            }
            positive("mjverify.t_end", m.t_end)?;
            tolerance("mjverify.tol", m.tol)?;
            positive("mjverify.max_dt", m.max_dt)?;
            positive("mjverify.hausdorff_tol", m.hausdorff_tol)?;
            dioph("mjverify.dioph", &m.dioph)?;
            for (path, n) in [
                ("mjverify.average_grid", m.average_grid),
                ("mjverify.conj_grid", m.conj_grid),
            ] {
                if n < 8 {
                    return Err(CliError::config(path, format!("{n} below 8")));
                }
            }
            if 2 * m.conj_k_max as usize >= m.conj_grid {
                return Err(CliError::config("mjverify.conj_k_max", "must be below conj_grid / 2"));
            }
            positive("mjverify.rescale_time", m.rescale_time)?;
            positive("mjverify.rescale_tol", m.rescale_tol)?;
            positive("mjverify.det_tol", m.det_tol)?;
        }
        "actions" => {
            let a = &cfg.actions;
            if a.energies.is_empty() {
                return Err(CliError::config("actions.energies", "empty list"));
            }
            for (i, e) in a.energies.iter().enumerate() {
                positive(&format!("actions.energies[{i}]"), *e)?;
            }
            if a.sep_consts.is_empty() {
                return Err(CliError::config("actions.sep_consts", "empty list"));
            }
            dioph("actions.dioph", &a.dioph)?;
        }
        "quantize" => cfg.quantize.validate(true)?,
        "oracle" => {
            h_value("oracle.h", cfg.oracle.h)?;
            cfg.quantize_delta_only()?;
            cfg.spectral.validate()?;
        }
        "compare" => {
            h_list("compare.h", &cfg.compare.h)?;
            positive("compare.match_factor", cfg.compare.match_factor)?;
            cfg.quantize.validate(false)?;
            cfg.spectral.validate()?;
        }
        "gaps" => {
            h_list("gaps.h", &cfg.gaps.h)?;
            positive("gaps.threshold_power", cfg.gaps.threshold_power)?;
            cfg.quantize_delta_only()?;
            cfg.spectral.validate()?;
        }
        "larmor" => {
            let l = &cfg.larmor;
            h_value("larmor.h", l.h)?;
            if !(l.delta > 0.0 && l.delta <= 1.0) {
                return Err(CliError::config("larmor.delta", format!("{} not in (0, 1]", l.delta)));
            }
            if l.modes < 64 {
                return Err(CliError::config("larmor.modes", format!("{} below 64", l.modes)));
            }
            if l.n_fibers < 4 || l.n_orbit < 4 {
                return Err(CliError::config(
                    "larmor.n_fibers",
                    "need at least 4 nodes per direction",
                ));
            }
            if l.cutoff.is_none() {
                return Err(CliError::config("larmor.cutoff", "required"));
            }
            if l.profile.is_none() {
                if l.ratio[1] == 0 {
                    return Err(CliError::config("larmor.ratio", "q must be nonzero"));
                }
                match l.sep_bracket {
                    Some([a, b]) if a < b => {}
                    _ => return Err(CliError::config("larmor.sep_bracket", "need [lo, hi] with lo < hi")),
                }
            }
        }
        "katok" => {
            let k = &cfg.katok;
            if !matches!(cfg.model, Some(ModelSpec::KatokRanders { .. })) {
                return Err(CliError::config("model.variant", "katok needs the katok_randers model"));
            }
            if k.latitudes.is_empty() {
                return Err(CliError::config("katok.latitudes", "empty list"));
            }
            positive("katok.period_tol", k.period_tol)?;
            positive("katok.angle_tol", k.angle_tol)?;
            positive("katok.det_tol", k.det_tol)?;
        }
        "sweep" => match &cfg.sweep {
            None => return Err(CliError::config("sweep", "required")),
            Some(s) => {
                if s.pipeline == "sweep" {
                    return Err(CliError::config("sweep.pipeline", "sweeps do not nest"));
                }
                if !crate::PIPELINES.contains(&s.pipeline.as_str()) {
                    return Err(CliError::config(
                        "sweep.pipeline",
                        format!("unknown pipeline `{}`", s.pipeline),
                    ));
                }
                if s.axis.is_empty() || s.axis.split('.').any(|k| k.is_empty()) {
                    return Err(CliError::config("sweep.axis", "need a dotted key path"));
                }
                if s.values.is_empty() {
                    return Err(CliError::config("sweep.values", "empty axis"));
                }
                for (i, v) in s.values.iter().enumerate() {
                    if let toml::Value::Float(f) = v {
                        if !f.is_finite() {
                            return Err(CliError::config(&format!("sweep.values[{i}]"), "non-finite value"));
                        }
                    }
                }
            }
        },
        other => return Err(CliError::config("pipeline", format!("unknown pipeline `{other}`"))),
    }
    Ok(())
}

impl RunConfig {
    fn quantize_delta_only(&self) -> Result<(), CliError> {
        let d = self.quantize.delta;
        if !(d > 0.0 && d <= 1.0) {
            return Err(CliError::config("quantize.delta", format!("{d} not in (0, 1]")));
        }
        Ok(())
    }

    pub fn model(&self) -> &ModelSpec {
        self.model.as_ref().expect("validated")
    }
}
