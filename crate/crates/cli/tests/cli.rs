use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(pipeline: &str, config: &str, dir: &Path, out: &str) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let out_dir = dir.join(out);
    let o = Command::new(env!("CARGO_BIN_EXE_mjspectra"))
        .arg(pipeline)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    (o, out_dir)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const KATOK: &str = "[model]\nvariant = \"katok_randers\"\nkatok_alpha = 0.3\n\
                     [katok]\nlatitudes = [0.0, 0.4]\n";

const LIOUVILLE: &str = "[model]\nvariant = \"liouville\"\nu = { cos = [1.0, 0.3] }\nv = { cos = [0.0, 0.2] }\n";

#[test]
fn out_of_range_delta_exits_2_with_the_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{LIOUVILLE}[quantize]\ndelta = 1.5\ncenter_sep_const = -0.45\n");
    let (o, dir) = run("quantize", &cfg, tmp.path(), "q");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("quantize.delta"), "{}", stderr(&o));
    assert!(!dir.exists(), "nothing is written before validation passes");
}

#[test]
fn malformed_values_and_unknown_keys_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run("katok", "[katok]\nlatitudes = \"north\"\n", tmp.path(), "a");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("katok.latitudes"), "{}", stderr(&o));
    let (o, _) = run("katok", &format!("{KATOK}tolerance = 1.0\n"), tmp.path(), "b");
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = run("katok", &format!("pipeline = \"gaps\"\n{KATOK}"), tmp.path(), "c");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`pipeline`"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_3_and_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{LIOUVILLE}[trace]\npoints = [[0.3, 1.1, 0.7, 0.4]]\nmax_time = 0.01\n\
         section = {{ coord = 0, level = 0.0, direction = \"up\", periodic = true }}\n"
    );
    let (o, dir) = run("trace", &cfg, tmp.path(), "t");
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`integrate`"), "{}", stderr(&o));
    let s = json(&dir.join("summary.json"));
    assert_eq!(s["pass"], false);
    assert!(s["error"].as_str().unwrap().contains("integrate"));
}

#[test]
fn failed_assertion_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // the return-map determinant is 1 only to integration accuracy
    let (o, dir) = run("katok", &format!("{KATOK}det_tol = 1e-30\n"), tmp.path(), "k");
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`assertions`"), "{}", stderr(&o));
    let s = json(&dir.join("summary.json"));
    assert_eq!(s["pass"], false);
    assert!(dir.join("katok_report.json").exists());
}

#[test]
fn every_file_carries_the_hash_and_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, da) = run("katok", KATOK, tmp.path(), "a");
    let (b, db) = run("katok", KATOK, tmp.path(), "b");
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    let hash = json(&da.join("summary.json"))["config_hash"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(hash.len(), 64);
    let mut names: Vec<String> = fs::read_dir(&da)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "breaking_east.csv",
            "breaking_west.csv",
            "katok_report.json",
            "summary.json",
            "timing.json"
        ]
    );
    for n in &names {
        let text = fs::read_to_string(da.join(n)).unwrap();
        assert!(text.contains(&hash), "{n} lacks the hash");
        if n != "timing.json" {
            assert_eq!(
                fs::read(da.join(n)).unwrap(),
                fs::read(db.join(n)).unwrap(),
                "{n} differs"
            );
        }
    }
    let first = fs::read_to_string(da.join("breaking_east.csv")).unwrap();
    assert_eq!(first.lines().next().unwrap(), format!("# config_hash: {hash}"));
}

#[test]
fn compare_on_the_flat_metric_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[model]\nvariant = \"liouville\"\nu = { cos = [1.0] }\nv = { cos = [0.0] }\n\
               [quantize]\nc0 = 0.3\ncenter_energy = 1.0\ncenter_sep_const = -0.3\n\
               [compare]\nh = [0.1, 0.05]\n";
    let (o, dir) = run("compare", cfg, tmp.path(), "flat");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&dir.join("summary.json"));
    assert!(s["metrics"]["max_error"].as_f64().unwrap() <= 1e-12);
    assert!(s["assertions"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a["name"] == "exact_agreement"));
    for i in 0..2 {
        let m = json(&dir.join(format!("match_{i:02}.json")));
        assert!(!m["report"]["pairs"].as_array().unwrap().is_empty());
        assert!(m["report"]["unmatched_predicted"].as_array().unwrap().is_empty());
    }
}

#[test]
fn katok_sweep_writes_one_report_per_value_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{KATOK}[sweep]\npipeline = \"katok\"\naxis = \"model.katok_alpha\"\n\
         values = [0.3, 0.5, 0.6180339887498949]\n"
    );
    let (o, dir) = run("sweep", &cfg, tmp.path(), "s");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let idx = json(&dir.join("index.json"));
    let runs = idx["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for (i, (r, alpha)) in runs.iter().zip([0.3, 0.5, 0.6180339887498949]).enumerate() {
        assert_eq!(r["index"], i);
        assert_eq!(r["exit_code"], 0);
        let rep = json(&dir.join(r["dir"].as_str().unwrap()).join("katok_report.json"));
        assert_eq!(rep["katok_alpha"].as_f64(), Some(alpha));
        assert_eq!(rep["config_hash"], r["config_hash"]);
    }
}

#[test]
fn sweep_isolates_failing_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{KATOK}[sweep]\npipeline = \"katok\"\naxis = \"model.katok_alpha\"\nvalues = [0.3, 1.5]\n");
    let (o, dir) = run("sweep", &cfg, tmp.path(), "s");
    assert_eq!(o.status.code(), Some(3));
    let runs = json(&dir.join("index.json"))["runs"].as_array().unwrap().clone();
    assert_eq!(runs[0]["exit_code"], 0);
    assert_eq!(runs[1]["exit_code"], 2);
    assert!(dir.join("run_000/katok_report.json").exists());
}

#[test]
fn empty_sweep_axis_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{KATOK}[sweep]\npipeline = \"katok\"\naxis = \"model.katok_alpha\"\nvalues = []\n");
    let (o, _) = run("sweep", &cfg, tmp.path(), "s");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.values"), "{}", stderr(&o));
}
