//! Parameter sweeps: one child run per axis value, each in its own
//! `run_NNN/` directory with its own configuration text and hash. A failing
//! child is recorded and does not stop the others.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use toml::Value;

use mjspectra_core::flow::least_squares_slope;

use crate::config::{self, SweepConfig};
use crate::error::CliError;
use crate::output::Output;
use crate::{execute, RunOutcome};

#[derive(Serialize)]
struct RunEntry {
    index: usize,
    value: serde_json::Value,
    dir: String,
    config_hash: String,
    exit_code: i32,
    pass: bool,
    error: Option<String>,
    metrics: std::collections::BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct SweepIndex<'a> {
    pipeline: &'a str,
    axis: &'a str,
    runs: Vec<RunEntry>,
    /// Log-log slope of `max_error` against the axis, when both are available.
    max_error_slope: Option<f64>,
}

/// Child configuration: the parent with the axis key replaced, the child
/// pipeline named and the sweep table removed.
pub fn child_config(parent: &Value, sweep: &SweepConfig, value: &Value) -> Result<String, CliError> {
    let mut v = parent.clone();
    let table = v
        .as_table_mut()
        .ok_or_else(|| CliError::config("(root)", "not a table"))?;
    table.remove("sweep");
    table.remove("out");
    table.insert("pipeline".into(), Value::String(sweep.pipeline.clone()));
    let keys: Vec<&str> = sweep.axis.split('.').collect();
    let (last, parents) = keys.split_last().expect("validated nonempty");
    let mut cur = table;
    for k in parents {
        let next = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| CliError::config("sweep.axis", format!("`{k}` is not a table")))?;
    }
    cur.insert(last.to_string(), value.clone());
    toml::to_string(&v).map_err(|e| CliError::config("sweep.values", e))
}

pub fn run(loaded: &config::Loaded, out: &Output) -> Result<bool, CliError> {
    let sweep = loaded.cfg.sweep.as_ref().expect("validated");
    let texts = sweep
        .values
        .iter()
        .map(|v| child_config(&loaded.value, sweep, v))
        .collect::<Result<Vec<_>, _>>()?;
    let entries: Vec<RunEntry> = texts
        .par_iter()
        .enumerate()
        .map(|(index, text)| {
            let dir_name = format!("run_{index:03}");
            let dir = out.dir.join(&dir_name);
            let outcome = run_child(&sweep.pipeline, text, &dir);
            let value = serde_json::to_value(&sweep.values[index]).unwrap_or(serde_json::Value::Null);
            let (exit_code, pass, error, metrics) = match outcome {
                Ok(o) => (o.exit_code(), o.report.pass(), o.error_text(), o.report.metrics),
                Err(e) => (e.exit_code(), false, Some(e.to_string()), Default::default()),
            };
            RunEntry {
                index,
                value,
                dir: dir_name,
                config_hash: config::hash_text(text),
                exit_code,
                pass,
                error,
                metrics,
            }
        })
        .collect();
    let max_error_slope = slope(&sweep.values, &entries);
    let ok = entries.iter().all(|e| e.exit_code == 0);
    out.json(
        "index.json",
        &SweepIndex {
            pipeline: &sweep.pipeline,
            axis: &sweep.axis,
            runs: entries,
            max_error_slope,
        },
    )?;
    Ok(ok)
}

fn run_child(pipeline: &str, text: &str, dir: &Path) -> Result<RunOutcome, CliError> {
    let loaded = config::parse(text.to_string())?;
    config::validate(&loaded.cfg, pipeline)?;
    execute(pipeline, &loaded, dir)
}

fn slope(values: &[Value], entries: &[RunEntry]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (v, e) in values.iter().zip(entries) {
        let x = scalar(v)?;
        let y = *e.metrics.get("max_error")?;
        if !(x > 0.0 && y > 0.0) {
            return None;
        }
        xs.push(x.ln());
        ys.push(y.ln());
    }
    (xs.len() >= 2).then(|| least_squares_slope(&xs, &ys).0)
}

/// Numeric value of a scalar or a one-element list (e.g. a single `h`).
fn scalar(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        Value::Array(a) if a.len() == 1 => scalar(&a[0]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_replaces_the_axis_and_drops_the_sweep() {
        let parent: Value = toml::from_str(
            "pipeline = \"sweep\"\n[model]\nvariant = \"katok_randers\"\nkatok_alpha = 0.3\n\
             [sweep]\npipeline = \"katok\"\naxis = \"model.katok_alpha\"\nvalues = [0.1]\n",
        )
        .unwrap();
        let s: SweepConfig = parent["sweep"].clone().try_into().unwrap();
        let text = child_config(&parent, &s, &Value::Float(0.25)).unwrap();
        let child: Value = toml::from_str(&text).unwrap();
        assert_eq!(child["model"]["katok_alpha"].as_float(), Some(0.25));
        assert_eq!(child["pipeline"].as_str(), Some("katok"));
        assert!(child.get("sweep").is_none());
    }

    #[test]
    fn axis_through_a_scalar_is_a_config_error() {
        let parent: Value = toml::from_str("seed = 1\n").unwrap();
        let s = SweepConfig {
            pipeline: "katok".into(),
            axis: "seed.x".into(),
            values: vec![Value::Integer(1)],
        };
        let err = child_config(&parent, &s, &Value::Integer(2)).unwrap_err();
        assert!(matches!(err, CliError::Config { ref path, .. } if path == "sweep.axis"));
    }
}
