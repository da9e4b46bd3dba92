//! On-disk event formats.
//!
//! Raw events are a `t_s,lambda_nm` CSV next to a JSON metadata sidecar with the
//! same stem. Processed events are an `x,y` CSV next to a sidecar that adds the
//! normalization parameters (and the class label once known).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NormalizationParams, RawFbgSeries, StrainEvent, StrainSeries};
use crate::classify::{BwimFeatures, TrainClass};
use crate::{Error, Result};

const DEFAULT_SENSOR: &str = "west-main-girder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetadata {
    pub event_id: String,
    pub speed_mps: f64,
    pub axle_count: usize,
    pub axle_weights_kn: Vec<f64>,
    pub axle_spacings_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_id: Option<String>,
}

impl EventMetadata {
    pub fn features(&self) -> Result<BwimFeatures> {
        BwimFeatures::new(
            self.axle_count,
            self.axle_weights_kn.clone(),
            self.axle_spacings_m.clone(),
        )
    }

    pub fn from_event(event: &StrainEvent) -> Self {
        EventMetadata {
            event_id: event.event_id.clone(),
            speed_mps: event.speed,
            axle_count: event.features.axle_count,
            axle_weights_kn: event.features.axle_weights.clone(),
            axle_spacings_m: event.features.axle_spacings.clone(),
            sensor_id: None,
        }
    }
}

/// Sidecar of a processed (normalized) event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSidecar {
    #[serde(flatten)]
    pub metadata: EventMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TrainClass>,
    pub normalization: NormalizationParams,
}

#[derive(Serialize, Deserialize)]
struct RawRow {
    t_s: f64,
    lambda_nm: f64,
}

#[derive(Serialize, Deserialize)]
struct XyRow {
    x: f64,
    y: f64,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sorted `<stem>.json` sidecars in `dir` that have a matching `<stem>.csv`.
pub fn list_event_stems(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") && path.with_extension("csv").exists() {
            stems.push(path.with_extension(""));
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn write_raw_event(dir: &Path, raw: &RawFbgSeries, meta: &EventMetadata) -> Result<PathBuf> {
    let stem = dir.join(&meta.event_id);
    let csv_path = stem.with_extension("csv");
    let mut w = csv_writer(&csv_path)?;
    for (&t_s, &lambda_nm) in raw.timestamps().iter().zip(raw.wavelengths()) {
        w.serialize(RawRow { t_s, lambda_nm })?;
    }
    flush(w, &csv_path)?;
    write_json(&stem.with_extension("json"), meta)?;
    Ok(stem)
}

pub fn read_raw_event(stem: &Path) -> Result<(RawFbgSeries, EventMetadata)> {
    let meta: EventMetadata = read_json(&stem.with_extension("json"))?;
    let mut r = csv_reader(&stem.with_extension("csv"))?;
    let (mut t, mut l) = (Vec::new(), Vec::new());
    for row in r.deserialize() {
        let row: RawRow = row?;
        t.push(row.t_s);
        l.push(row.lambda_nm);
    }
    let sensor = meta.sensor_id.clone().unwrap_or_else(|| DEFAULT_SENSOR.to_string());
    Ok((RawFbgSeries::new(t, l, sensor)?, meta))
}

pub fn write_series_csv(path: &Path, series: &StrainSeries) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (&x, &y) in series.x().iter().zip(series.y()) {
        w.serialize(XyRow { x, y })?;
    }
    flush(w, path)
}

/// Write a normalized event as `<event_id>.csv` + `<event_id>.json`.
pub fn write_processed_event(dir: &Path, event: &StrainEvent) -> Result<PathBuf> {
    let normalization = *event.series.normalization().ok_or_else(|| {
        Error::invalid(format!("event {} is not normalized", event.event_id))
    })?;
    let stem = dir.join(&event.event_id);
    write_series_csv(&stem.with_extension("csv"), &event.series)?;
    let sidecar = ProcessedSidecar {
        metadata: EventMetadata::from_event(event),
        label: event.label,
        normalization,
    };
    write_json(&stem.with_extension("json"), &sidecar)?;
    Ok(stem)
}

pub fn read_processed_event(stem: &Path) -> Result<StrainEvent> {
    let sidecar: ProcessedSidecar = read_json(&stem.with_extension("json"))?;
    let mut r = csv_reader(&stem.with_extension("csv"))?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for row in r.deserialize() {
        let row: XyRow = row?;
        x.push(row.x);
        y.push(row.y);
    }
    let series = StrainSeries::normalized(x, y, sidecar.normalization)?;
    let meta = &sidecar.metadata;
    let mut event = StrainEvent::new(meta.event_id.clone(), series, meta.speed_mps, meta.features()?)?;
    event.label = sidecar.label;
    Ok(event)
}

pub fn read_processed_dir(dir: &Path) -> Result<Vec<StrainEvent>> {
    list_event_stems(dir)?
        .iter()
        .map(|stem| read_processed_event(stem))
        .collect()
}
