use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_strainfield");

const QUICK: &str = "\
seed = 5
basis.M = 16
sampler.chains = 2
sampler.warmup = 150
sampler.samples = 100
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("STRAINFIELD_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksum(manifest: &Value, stage: &str, file: &str) -> String {
    manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["stage"] == stage)
        .unwrap_or_else(|| panic!("no stage {stage}"))["outputs"][file]
        .as_str()
        .unwrap_or_else(|| panic!("no {file} in {stage}"))
        .to_string()
}

#[test]
fn simulate_writes_requested_count_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&["simulate", "--class", "22x", "--n", "3", "--seed", "9", "--out", s(dir)]);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6, "{names:?}");
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--class", "other", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--class", "350"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "basis.N = 4\n").unwrap();
    let out = run(&["pipeline", "--out", s(&tmp.path().join("run")), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["convert", "--input", s(&empty), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_end_to_end_and_stage_isolation() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("quick.toml");
    fs::write(&config, QUICK).unwrap();
    let run_dir = tmp.path().join("run");
    ok(&["pipeline", "--out", s(&run_dir), "--config", s(&config)]);

    let text = fs::read_to_string(run_dir.join("monitor/correlation.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 20);
        assert_eq!(row[i], 1.0);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, rows[j][i]);
        }
    }
    let flags: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("monitor/flags.json")).unwrap()).unwrap();
    assert_eq!(flags["events"].as_array().unwrap().len(), 20);
    assert_eq!(fs::read_dir(run_dir.join("predictions")).unwrap().count(), 20);

    // The same stages run one process at a time reproduce the pipeline's files.
    let m = manifest(&run_dir);
    let solo = tmp.path().join("solo");
    let processed = solo.join("processed");
    let fit = solo.join("fit");
    let c = s(&config);
    ok(&["convert", "--input", s(&run_dir.join("raw")), "--out", s(&processed), "--config", c]);
    ok(&["classify", "--input", s(&processed), "--out", s(&solo.join("classes.csv"))]);
    ok(&["fit", "--input", s(&processed), "--out", s(&fit), "--config", c]);
    let samples = fit.join("samples.csv");
    ok(&["monitor", "--input", s(&processed), "--samples", s(&samples), "--classes", s(&solo.join("classes.csv")), "--out", s(&solo.join("monitor")), "--config", c]);

    let digest = |p: &Path| strainfield::config::sha256_hex(&fs::read(p).unwrap());
    assert_eq!(digest(&processed.join("350-004.csv")), checksum(&m, "convert", "processed/350-004.csv"));
    assert_eq!(digest(&solo.join("classes.csv")), checksum(&m, "classify", "classes.csv"));
    assert_eq!(digest(&samples), checksum(&m, "fit", "fit/samples.csv"));
    assert_eq!(
        digest(&solo.join("monitor/correlation.csv")),
        checksum(&m, "monitor", "monitor/correlation.csv")
    );
}

#[test]
fn manifest_hash_tracks_config_not_spelling() {
    let tmp = tempfile::tempdir().unwrap();
    let tiny = "seed = 1\nbasis.M = 8\nsampler.chains = 1\nsampler.warmup = 60\nsampler.samples = 40\nsimulate.events_per_class = 3\n";
    let configs = [
        tiny.to_string(),
        // same values, different layout
        format!("# reordered\nsimulate.events_per_class = 3\n{}", tiny.replace("simulate.events_per_class = 3\n", "")),
        tiny.replace("basis.M = 8", "basis.M = 9"),
    ];
    let mut hashes = Vec::new();
    for (i, text) in configs.iter().enumerate() {
        let path = tmp.path().join(format!("c{i}.toml"));
        fs::write(&path, text).unwrap();
        let dir = tmp.path().join(format!("run{i}"));
        ok(&["pipeline", "--out", s(&dir), "--config", s(&path)]);
        hashes.push(manifest(&dir)["config_hash"].as_str().unwrap().to_string());
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_ne!(hashes[0], hashes[2]);

    let m0 = manifest(&tmp.path().join("run0"));
    let m1 = manifest(&tmp.path().join("run1"));
    assert_eq!(m0["stages"], m1["stages"]);
}

#[test]
fn config_file_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("env.toml");
    fs::write(&path, "basis.M = 0\n").unwrap();
    let out = Command::new(BIN)
        .args(["fit", "--input", s(tmp.path()), "--out", s(&tmp.path().join("fit"))])
        .env("STRAINFIELD_CONFIG", &path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
