//! Output files. Every CSV starts with a `# config_hash: <hex>` comment line
//! and every JSON object carries a `config_hash` key, so each artefact can be
//! traced to the exact configuration text that produced it. Nothing written
//! here depends on wall time; timings go to `timing.json` only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
    files: Mutex<Vec<String>>,
}

impl Output {
    pub fn create(dir: &Path, hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            files: Mutex::new(Vec::new()),
        })
    }

    fn record(&self, name: &str) {
        self.files.lock().expect("file list").push(name.to_string());
    }

    /// Files written so far, sorted.
    pub fn files(&self) -> Vec<String> {
        let mut f = self.files.lock().expect("file list").clone();
        f.sort();
        f
    }

    fn hash_line(&self) -> Vec<u8> {
        format!("# config_hash: {}\n", self.hash).into_bytes()
    }

    /// Serialises `rows` with a header taken from the row type.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(self.hash_line());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.raw(name, &bytes)
    }

    /// CSV produced by a writer callback (for types with their own format).
    pub fn csv_with<F>(&self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = self.hash_line();
        write(&mut buf)?;
        self.raw(name, &buf)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let v = serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))?;
        let tagged = self.tag(v);
        let mut text = serde_json::to_string_pretty(&tagged).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    /// Adds `config_hash`; non-objects are wrapped under `data`.
    fn tag(&self, v: Value) -> Value {
        let mut m = Map::new();
        m.insert("config_hash".into(), Value::String(self.hash.clone()));
        match v {
            Value::Object(o) => {
                for (k, x) in o {
                    if k != "config_hash" {
                        m.insert(k, x);
                    }
                }
            }
            other => {
                m.insert("data".into(), other);
            }
        }
        Value::Object(m)
    }

    fn raw(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.record(name);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
}

/// Pass/fail record plus scalar metrics of one run.
#[derive(Debug, Default, Clone, Serialize)]
pub struct Report {
    pub assertions: Vec<Assertion>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Report {
    /// Records `value <= limit`.
    pub fn at_most(&mut self, name: &str, value: f64, limit: f64) {
        self.assertions.push(Assertion {
            name: name.into(),
            pass: value <= limit,
            value,
            limit,
        });
    }

    /// Records `value >= limit`.
    pub fn at_least(&mut self, name: &str, value: f64, limit: f64) {
        self.assertions.push(Assertion {
            name: name.into(),
            pass: value >= limit,
            value,
            limit,
        });
    }

    pub fn holds(&mut self, name: &str, ok: bool) {
        self.assertions.push(Assertion {
            name: name.into(),
            pass: ok,
            value: ok as u8 as f64,
            limit: 1.0,
        });
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.assertions
            .iter()
            .filter(|a| !a.pass)
            .map(|a| a.name.as_str())
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Timer {
    stages: Vec<(String, f64)>,
}

impl Timer {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    pub fn write(&self, dir: &Path, hash: &str) -> Result<(), CliError> {
        let stages: Vec<Value> = self
            .stages
            .iter()
            .map(|(s, t)| serde_json::json!({ "stage": s, "seconds": t }))
            .collect();
        let total: f64 = self.stages.iter().map(|s| s.1).sum();
        let v = serde_json::json!({ "config_hash": hash, "stages": stages, "total_seconds": total });
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        fs::write(dir.join("timing.json"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_format_carries_the_hash() {
        let dir = std::env::temp_dir().join(format!("mjspectra-out-{}", std::process::id()));
        let out = Output::create(&dir, "abc").unwrap();
        #[derive(Serialize)]
        struct Row {
            a: f64,
        }
        out.csv("r.csv", &[Row { a: 0.1 }]).unwrap();
        out.json("v.json", &vec![1, 2]).unwrap();
        out.json("o.json", &serde_json::json!({ "x": 1 })).unwrap();
        let csv = fs::read_to_string(dir.join("r.csv")).unwrap();
        assert_eq!(csv, "# config_hash: abc\na\n0.1\n");
        for f in ["v.json", "o.json"] {
            let v: Value = serde_json::from_str(&fs::read_to_string(dir.join(f)).unwrap()).unwrap();
            assert_eq!(v["config_hash"], "abc");
        }
        assert_eq!(out.files(), vec!["o.json", "r.csv", "v.json"]);
        fs::remove_dir_all(dir).unwrap();
    }
}
