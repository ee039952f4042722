//! `mjspectra <pipeline> --config <file> [--out <dir>] [--jobs N]`
//!
//! Exit codes: 0 success, 2 configuration error (the message names the field
//! path), 3 numerical failure (the message names the stage; failed
//! assertions report the stage `assertions`).

mod config;
mod error;
mod output;
mod pipelines;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::config::Loaded;
use crate::error::CliError;
use crate::output::{Output, Report, Timer};

pub const PIPELINES: [&str; 10] = [
    "trace", "mjverify", "actions", "quantize", "oracle", "compare", "gaps", "larmor", "katok", "sweep",
];

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pipeline {
    Trace,
    Mjverify,
    Actions,
    Quantize,
    Oracle,
    Compare,
    Gaps,
    Larmor,
    Katok,
    Sweep,
}

impl Pipeline {
    fn name(self) -> &'static str {
        PIPELINES[self as usize]
    }
}

#[derive(Debug, Parser)]
#[command(name = "mjspectra", version, about = "Maupertuis-Jacobi flows, tori and spectra")]
struct Args {
    pipeline: Pipeline,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: `out` from the config, else out/<pipeline>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
}

/// Result of a run whose configuration was accepted.
pub struct RunOutcome {
    pub report: Report,
    pub error: Option<CliError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match &self.error {
            Some(e) => e.exit_code(),
            None if self.report.pass() => 0,
            None => 3,
        }
    }

    pub fn error_text(&self) -> Option<String> {
        match &self.error {
            Some(e) => Some(e.to_string()),
            None if self.report.pass() => None,
            None => Some(assertion_error(&self.report).to_string()),
        }
    }
}

fn assertion_error(report: &Report) -> CliError {
    CliError::numerical("assertions", format!("failed: {}", report.failed().join(", ")))
}

#[derive(Serialize)]
struct Summary<'a> {
    pipeline: &'a str,
    pass: bool,
    assertions: &'a [output::Assertion],
    metrics: &'a std::collections::BTreeMap<String, f64>,
    notes: &'a [String],
    outputs: Vec<String>,
    error: Option<String>,
    version: &'static str,
    config: &'a str,
}

/// Runs a validated configuration into `dir`. Configuration errors raised
/// while running are returned as `Err` and leave no summary; numerical
/// failures are recorded in `summary.json`.
pub fn execute(pipeline: &str, loaded: &Loaded, dir: &Path) -> Result<RunOutcome, CliError> {
    let out = Output::create(dir, &loaded.hash)?;
    let mut timer = Timer::default();
    let result = if pipeline == "sweep" {
        timer.time("sweep", || sweep::run(loaded, &out)).map(|ok| {
            let mut r = Report::default();
            r.holds("all_runs_succeeded", ok);
            r
        })
    } else {
        pipelines::run(pipeline, &loaded.cfg, &out, &mut timer)
    };
    let outcome = match result {
        Ok(report) => RunOutcome { report, error: None },
        Err(e @ CliError::Config { .. }) => return Err(e),
        Err(e) => RunOutcome {
            report: Report::default(),
            error: Some(e),
        },
    };
    let summary = Summary {
        pipeline,
        pass: outcome.exit_code() == 0,
        assertions: &outcome.report.assertions,
        metrics: &outcome.report.metrics,
        notes: &outcome.report.notes,
        outputs: out.files(),
        error: outcome.error_text(),
        version: env!("CARGO_PKG_VERSION"),
        config: &loaded.text,
    };
    out.json("summary.json", &summary)?;
    timer.write(dir, &loaded.hash)?;
    Ok(outcome)
}

fn main_inner(args: &Args) -> Result<RunOutcome, CliError> {
    let pipeline = args.pipeline.name();
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::config("--config", format!("{}: {e}", args.config.display())))?;
    let loaded = config::parse(text)?;
    config::validate(&loaded.cfg, pipeline)?;
    if let Some(n) = args.jobs {
        if n == 0 {
            return Err(CliError::config("--jobs", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("--jobs", e))?;
    }
    let dir = args
        .out
        .clone()
        .or_else(|| loaded.cfg.out.clone())
        .unwrap_or_else(|| Path::new("out").join(pipeline));
    execute(pipeline, &loaded, &dir)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(&args) {
        Ok(o) => {
            if let Some(msg) = o.error_text() {
                eprintln!("mjspectra: {msg}");
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("mjspectra: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
