//! File-based pipeline stages behind the command line tool.
//!
//! Each stage reads only the files written by the stage before it:
//!
//! | stage      | reads                                  | writes                                   |
//! |------------|----------------------------------------|------------------------------------------|
//! | `simulate` | -                                      | raw `<id>.csv` + `<id>.json`             |
//! | `convert`  | raw events                             | processed events, `rejected.json`        |
//! | `classify` | event sidecars                         | `classes.csv`                            |
//! | `fit`      | processed events                       | `samples.csv`, `diagnostics.json`        |
//! | `predict`  | processed events, `samples.csv`        | `<id>.csv` per event                     |
//! | `monitor`  | processed events, samples, classes     | `correlation.csv`, `flags.json`, `envelopes.csv` |
//!
//! `run_pipeline` chains them under one output directory and records a manifest
//! of SHA-256 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{classify_event, TrainClass};
use crate::config::{sha256_hex, RunConfig, Stage};
use crate::inference::{posterior_predictive, run_sampler, Diagnostics, PosteriorSamples};
use crate::ingest::files::{
    list_event_stems, read_json, read_processed_dir, read_raw_event, write_json, write_processed_event,
    write_raw_event, EventMetadata,
};
use crate::ingest::{
    compute_baseline, event_to_distance, lowpass_filter, normalize_events, wavelength_to_microstrain,
    StrainEvent,
};
use crate::model::{EventDataset, ParameterLayout};
use crate::monitor::{correlation_report, CorrelationReport};
use crate::simulate::{make_fleet_with, FleetOptions, NoiseLevel, Sampling, NOMINAL_LAMBDA0_NM};
use crate::stats::derive_seed;
use crate::{Error, Result};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const CLASSES_FILE: &str = "classes.csv";
pub const REJECTED_FILE: &str = "rejected.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_MARKER: &str = ".failed";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Write `n` crossings of each requested class as raw FBG records. Fleet `i`
/// draws from a seed derived from `(seed, i)`.
pub fn simulate_to_dir(
    out_dir: &Path,
    fleets: &[(TrainClass, usize)],
    noise_sd: f64,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let options = FleetOptions {
        noise: NoiseLevel::Microstrain(noise_sd),
        sampling: Sampling::RateHz(sample_rate_hz),
        ..FleetOptions::default()
    };
    let mut stems = Vec::new();
    for (i, &(class, n)) in fleets.iter().enumerate() {
        for sim in make_fleet_with(class, n, derive_seed(seed, i as u64), &options)? {
            let raw = sim.to_raw(NOMINAL_LAMBDA0_NM, crate::ingest::DEFAULT_GAUGE_FACTOR, "sim")?;
            let mut meta = EventMetadata::from_event(&sim.event);
            meta.sensor_id = Some("sim".into());
            stems.push(write_raw_event(out_dir, &raw, &meta)?);
        }
    }
    Ok(stems)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub event_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvertReport {
    pub written: Vec<String>,
    pub rejected: Vec<Rejection>,
}

fn is_rejectable(e: &Error) -> bool {
    matches!(e, Error::DomainOverflow { .. } | Error::DegenerateInput(_))
}

fn raw_to_distance(stem: &Path, config: &RunConfig) -> Result<StrainEvent> {
    let (raw, meta) = read_raw_event(stem)?;
    let ing = &config.ingest;
    let lambda0 = compute_baseline(&raw, ing.baseline_window)?;
    let mut series = wavelength_to_microstrain(&raw, ing.gauge_factor, lambda0)?;
    if ing.filter_window > 1 {
        series = lowpass_filter(&series, ing.filter_window)?;
    }
    let event = StrainEvent::new(meta.event_id.clone(), series, meta.speed_mps, meta.features()?)?;
    event_to_distance(&event)
}

/// Raw records to normalized, distance-indexed events. Events that cannot be
/// normalized are listed in `rejected.json` instead of aborting the stage.
pub fn convert_dir(raw_dir: &Path, out_dir: &Path, config: &RunConfig) -> Result<ConvertReport> {
    create_dir(out_dir)?;
    let mut report = ConvertReport::default();
    let mut events = Vec::new();
    for stem in list_event_stems(raw_dir)? {
        match raw_to_distance(&stem, config) {
            Ok(ev) => events.push(ev),
            Err(e) if is_rejectable(&e) => report.rejected.push(Rejection {
                event_id: stem.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if events.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "no convertible events in {}",
            raw_dir.display()
        )));
    }
    for (ev, result) in events.iter().zip(normalize_events(&events, config.ingest.normalization)?) {
        match result {
            Ok(norm) => {
                write_processed_event(out_dir, &norm)?;
                report.written.push(norm.event_id);
            }
            Err(e) if is_rejectable(&e) => report.rejected.push(Rejection {
                event_id: ev.event_id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    write_json(&out_dir.join(REJECTED_FILE), &report.rejected)?;
    Ok(report)
}

/// Classify every event sidecar in `dir` and write `event_id,class` rows.
pub fn classify_dir(dir: &Path, out_csv: &Path) -> Result<Vec<(String, TrainClass)>> {
    let mut rows = Vec::new();
    for stem in list_event_stems(dir)? {
        let meta: EventMetadata = read_json(&stem.with_extension("json"))?;
        rows.push((meta.event_id.clone(), classify_event(&meta.features()?)));
    }
    if let Some(parent) = out_csv.parent() {
        create_dir(parent)?;
    }
    let mut w = csv_writer(out_csv)?;
    w.write_record(["event_id", "class"])?;
    for (id, class) in &rows {
        w.write_record([id.as_str(), class.as_str()])?;
    }
    finish(w, out_csv)?;
    Ok(rows)
}

pub fn read_classes(path: &Path) -> Result<BTreeMap<String, TrainClass>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::invalid(format!("{}: expected event_id,class rows", path.display())));
        }
        out.insert(row[0].to_string(), row[1].parse()?);
    }
    Ok(out)
}

/// Draws as `chain,iter,<parameter names>`, on the constrained scale.
pub fn write_samples_csv(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["chain".to_string(), "iter".to_string()];
    header.extend(samples.names().iter().cloned());
    w.write_record(&header)?;
    for c in 0..samples.chains() {
        for i in 0..samples.draws_per_chain() {
            let mut row = vec![(c + 1).to_string(), (i + 1).to_string()];
            row.extend(samples.draw(c, i).iter().map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
    }
    finish(w, path)
}

pub fn read_samples_csv(path: &Path) -> Result<PosteriorSamples> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "iter" {
        return Err(Error::invalid(format!("{}: not a samples file", path.display())));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let events = names.iter().filter(|n| n.starts_with("sigma_")).count();
    let betas = names.iter().filter(|n| n.starts_with("beta_")).count();
    let layout = (events > 0 && betas % events == 0).then(|| ParameterLayout {
        events,
        basis_size: betas / events,
    });
    let layout = layout.filter(|l| l.names() == names);

    let mut values = Vec::new();
    let mut chain_ids = Vec::new();
    for row in r.records() {
        let row = row?;
        let chain: usize = row[0]
            .parse()
            .map_err(|_| Error::invalid(format!("bad chain index `{}`", &row[0])))?;
        chain_ids.push(chain);
        for v in row.iter().skip(2) {
            values.push(
                v.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad sample value `{v}`")))?,
            );
        }
    }
    let chains = chain_ids.iter().copied().max().unwrap_or(0);
    if chains == 0 || chain_ids.len() % chains != 0 {
        return Err(Error::invalid(format!("{}: ragged chains", path.display())));
    }
    PosteriorSamples::from_parts(names, chains, chain_ids.len() / chains, values, Vec::new(), layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub event_ids: Vec<String>,
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub divergences: usize,
    pub convergence_failure: bool,
    /// Absent with fewer than two chains.
    pub diagnostics: Option<Diagnostics>,
}

fn dataset(processed_dir: &Path, config: &RunConfig) -> Result<(Vec<StrainEvent>, EventDataset)> {
    let events = read_processed_dir(processed_dir)?;
    let data = EventDataset::new(&events, config.basis.build()?)?;
    Ok((events, data))
}

/// Sample the posterior of all processed events.
pub fn fit_dir(processed_dir: &Path, out_dir: &Path, config: &RunConfig) -> Result<(PosteriorSamples, FitSummary)> {
    create_dir(out_dir)?;
    let (events, data) = dataset(processed_dir, config)?;
    let sampler = config.sampler_config(Stage::Fit);
    let samples = run_sampler(&data, &config.priors, &sampler)?;
    let diagnostics = if samples.chains() >= 2 && samples.draws_per_chain() >= 4 {
        Some(Diagnostics::compute(&samples)?)
    } else {
        None
    };
    let summary = FitSummary {
        event_ids: events.iter().map(|e| e.event_id.clone()).collect(),
        chains: sampler.chains,
        warmup: sampler.warmup,
        samples: sampler.samples,
        seed: sampler.seed,
        divergences: samples.divergence_count(),
        convergence_failure: samples.convergence_failure,
        diagnostics,
    };
    write_samples_csv(&out_dir.join(SAMPLES_FILE), &samples)?;
    write_json(&out_dir.join(DIAGNOSTICS_FILE), &summary)?;
    Ok((samples, summary))
}

fn load_fit(processed_dir: &Path, samples_csv: &Path, config: &RunConfig) -> Result<(Vec<StrainEvent>, EventDataset, PosteriorSamples)> {
    let (events, data) = dataset(processed_dir, config)?;
    let samples = read_samples_csv(samples_csv)?;
    if samples.layout() != Some(data.layout()) {
        return Err(Error::invalid(format!(
            "{} does not match the {} processed events with M = {}",
            samples_csv.display(),
            data.len(),
            data.basis().size()
        )));
    }
    Ok((events, data, samples))
}

/// Posterior envelopes per event on the monitoring grid, in model units and in
/// metres / micro-strain.
pub fn predict_dir(
    processed_dir: &Path,
    samples_csv: &Path,
    out_dir: &Path,
    config: &RunConfig,
) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let (events, data, samples) = load_fit(processed_dir, samples_csv, config)?;
    let grid = config.monitor.grid()?;
    let mut written = Vec::new();
    for (k, ev) in events.iter().enumerate() {
        let p = posterior_predictive(&samples, &data, k, &grid)?;
        let norm = ev
            .series
            .normalization()
            .ok_or_else(|| Error::invalid(format!("event {} is not normalized", ev.event_id)))?;
        let path = out_dir.join(format!("{}.csv", ev.event_id));
        let mut w = csv_writer(&path)?;
        w.write_record(["x", "distance_m", "mean", "lower", "upper", "mean_ue", "lower_ue", "upper_ue"])?;
        for i in 0..grid.len() {
            w.write_record([
                fmt(grid[i]),
                fmt(norm.denormalize_x(grid[i])),
                fmt(p.mean[i]),
                fmt(p.lower[i]),
                fmt(p.upper[i]),
                fmt(norm.denormalize_y(p.mean[i])),
                fmt(norm.denormalize_y(p.lower[i])),
                fmt(norm.denormalize_y(p.upper[i])),
            ])?;
        }
        finish(w, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct FlagRow<'a> {
    event_id: &'a str,
    label: TrainClass,
    score: Option<f64>,
    flagged: bool,
}

#[derive(Serialize)]
struct FlagsFile<'a> {
    rule: &'a str,
    events: Vec<FlagRow<'a>>,
}

/// Correlation matrix, outlier flags and envelopes for plotting. Labels come
/// from `classes_csv` when given, otherwise from the event features.
pub fn monitor_dir(
    processed_dir: &Path,
    samples_csv: &Path,
    classes_csv: Option<&Path>,
    out_dir: &Path,
    config: &RunConfig,
) -> Result<CorrelationReport> {
    create_dir(out_dir)?;
    let (events, data, samples) = load_fit(processed_dir, samples_csv, config)?;
    let labels: Vec<TrainClass> = match classes_csv {
        Some(path) => {
            let classes = read_classes(path)?;
            events
                .iter()
                .map(|e| {
                    classes
                        .get(&e.event_id)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("no class for event {}", e.event_id)))
                })
                .collect::<Result<_>>()?
        }
        None => events.iter().map(|e| classify_event(&e.features)).collect(),
    };
    let report = correlation_report(&samples, &data, &labels, &config.monitor)?;

    let path = out_dir.join("correlation.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(&report.event_ids)?;
    for row in &report.matrix {
        w.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    finish(w, &path)?;

    let flags = FlagsFile {
        rule: &report.rule,
        events: report
            .event_ids
            .iter()
            .zip(&report.labels)
            .zip(&report.flags)
            .map(|((id, &label), f)| FlagRow {
                event_id: id,
                label,
                score: f.score,
                flagged: f.flagged,
            })
            .collect(),
    };
    write_json(&out_dir.join("flags.json"), &flags)?;

    let path = out_dir.join("envelopes.csv");
    let predictions = (0..data.len())
        .map(|k| posterior_predictive(&samples, &data, k, &report.grid))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv_writer(&path)?;
    let mut header = vec!["x".to_string()];
    for id in &report.event_ids {
        header.extend(["mean", "lower", "upper"].map(|s| format!("{id}_{s}")));
    }
    w.write_record(&header)?;
    for (i, x) in report.grid.iter().enumerate() {
        let mut row = vec![fmt(*x)];
        for p in &predictions {
            row.extend([p.mean[i], p.lower[i], p.upper[i]].map(fmt));
        }
        w.write_record(&row)?;
    }
    finish(w, &path)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Relative path to SHA-256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub rejected: Vec<Rejection>,
}

fn checksums(root: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let rel = p.strip_prefix(root).unwrap_or(p);
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.insert(key, sha256_hex(&bytes));
    }
    Ok(out)
}

fn files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Run every stage under `out_dir`. Without `input`, simulated fleets are
/// written to `out_dir/raw` first. On failure the partial outputs stay in place
/// next to a `.failed` marker naming the stage.
pub fn run_pipeline(input: Option<&Path>, out_dir: &Path, config: &RunConfig) -> Result<Manifest> {
    create_dir(out_dir)?;
    let marker = out_dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let mut stages = Vec::new();
    let mut rejected = Vec::new();
    let result = (|| -> Result<()> {
        let raw_dir = match input {
            Some(dir) => dir.to_path_buf(),
            None => {
                let dir = out_dir.join("raw");
                let sim = &config.simulate;
                let fleets = [
                    (TrainClass::Type350, sim.events_per_class),
                    (TrainClass::Type22x, sim.events_per_class),
                ];
                stage("simulate", || {
                    simulate_to_dir(&dir, &fleets, sim.noise_sd, sim.sample_rate_hz, config.stage_seed(Stage::Simulate))?;
                    files_in(&dir)
                }, out_dir, &mut stages)?;
                dir
            }
        };
        let processed = out_dir.join("processed");
        stage("convert", || {
            rejected = convert_dir(&raw_dir, &processed, config)?.rejected;
            files_in(&processed)
        }, out_dir, &mut stages)?;
        let classes = out_dir.join(CLASSES_FILE);
        stage("classify", || {
            classify_dir(&processed, &classes)?;
            Ok(vec![classes.clone()])
        }, out_dir, &mut stages)?;
        let fit = out_dir.join("fit");
        stage("fit", || {
            fit_dir(&processed, &fit, config)?;
            files_in(&fit)
        }, out_dir, &mut stages)?;
        let samples = fit.join(SAMPLES_FILE);
        let predictions = out_dir.join("predictions");
        stage("predict", || predict_dir(&processed, &samples, &predictions, config), out_dir, &mut stages)?;
        let monitor = out_dir.join("monitor");
        stage("monitor", || {
            monitor_dir(&processed, &samples, Some(&classes), &monitor, config)?;
            files_in(&monitor)
        }, out_dir, &mut stages)?;
        Ok(())
    })();

    if let Err(e) = result {
        let text = format!("{e}\n");
        fs::write(&marker, text).map_err(|err| Error::io(&marker, err))?;
        return Err(e);
    }
    let manifest = Manifest {
        config_hash: config.hash(),
        seed: config.seed,
        stages,
        rejected,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn stage(
    name: &str,
    run: impl FnOnce() -> Result<Vec<PathBuf>>,
    root: &Path,
    records: &mut Vec<StageRecord>,
) -> Result<()> {
    let attach = |e: Error| Error::Stage {
        stage: name.to_string(),
        cause: Box::new(e),
    };
    let outputs = run().map_err(attach)?;
    records.push(StageRecord {
        stage: name.to_string(),
        outputs: checksums(root, &outputs).map_err(attach)?,
    });
    Ok(())
}
