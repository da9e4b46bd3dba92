//! From raw grating wavelengths to normalized strain envelopes.
//!
//! The chain is `compute_baseline` → `wavelength_to_microstrain` →
//! `lowpass_filter` → `time_to_distance` → normalization. Every step is a pure
//! function returning a new series.

pub mod files;

use serde::{Deserialize, Serialize};

use crate::classify::{BwimFeatures, TrainClass};
use crate::stats::{mean, population_sd};
use crate::{Error, Result};

/// Manufacturer gauge factor of the gratings.
pub const DEFAULT_GAUGE_FACTOR: f64 = 0.78;
/// Samples averaged at the start of a record to form the reference wavelength.
pub const DEFAULT_BASELINE_WINDOW: usize = 100;
pub const DEFAULT_FILTER_WINDOW: usize = 21;
/// Normalized inputs must stay inside [-3, 3], the approximation domain.
pub const NORMALIZED_INPUT_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RawFbgSeries {
    timestamps: Vec<f64>,
    wavelengths: Vec<f64>,
    sensor_id: String,
}

impl RawFbgSeries {
    pub fn new(timestamps: Vec<f64>, wavelengths: Vec<f64>, sensor_id: impl Into<String>) -> Result<Self> {
        if timestamps.len() != wavelengths.len() {
            return Err(Error::invalid(format!(
                "{} timestamps but {} wavelengths",
                timestamps.len(),
                wavelengths.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(Error::invalid("a raw series needs at least two samples"));
        }
        check_strictly_increasing(&timestamps, "timestamps")?;
        if wavelengths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("wavelengths must be finite and positive"));
        }
        Ok(RawFbgSeries {
            timestamps,
            wavelengths,
            sensor_id: sensor_id.into(),
        })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// What the `x` coordinate of a [`StrainSeries`] currently measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputAxis {
    /// Seconds since the first sample.
    Time,
    /// Metres travelled since the first sample.
    Distance,
    /// Dimensionless, z-scored.
    Normalized,
}

/// Affine maps taking a distance-indexed micro-strain series to model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub x_mean: f64,
    pub x_sd: f64,
    pub y_scale: f64,
    /// Reference wavelength in nm, absent for series that never were wavelengths.
    pub baseline_lambda0: Option<f64>,
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_sd.is_finite() && self.x_sd > 0.0) {
            return Err(Error::invalid("x_sd must be positive"));
        }
        if !(self.y_scale.is_finite() && self.y_scale > 0.0) {
            return Err(Error::invalid("y_scale must be positive"));
        }
        Ok(())
    }

    pub fn normalize_x(&self, x: f64) -> f64 {
        (x - self.x_mean) / self.x_sd
    }

    pub fn normalize_y(&self, y: f64) -> f64 {
        y / self.y_scale
    }

    pub fn denormalize_x(&self, x: f64) -> f64 {
        x * self.x_sd + self.x_mean
    }

    pub fn denormalize_y(&self, v: f64) -> f64 {
        v * self.y_scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrainSeries {
    x: Vec<f64>,
    y: Vec<f64>,
    axis: InputAxis,
    baseline_lambda0: Option<f64>,
    normalization: Option<NormalizationParams>,
}

impl StrainSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>, axis: InputAxis) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "x has {} samples but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::invalid("empty strain series"));
        }
        check_strictly_increasing(&x, "x")?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("strain values must be finite"));
        }
        Ok(StrainSeries {
            x,
            y,
            axis,
            baseline_lambda0: None,
            normalization: None,
        })
    }

    /// Rebuild a normalized series read back from disk.
    pub fn normalized(x: Vec<f64>, y: Vec<f64>, params: NormalizationParams) -> Result<Self> {
        params.validate()?;
        let mut s = StrainSeries::new(x, y, InputAxis::Normalized)?;
        s.baseline_lambda0 = params.baseline_lambda0;
        s.normalization = Some(params);
        Ok(s)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn axis(&self) -> InputAxis {
        self.axis
    }

    pub fn normalization(&self) -> Option<&NormalizationParams> {
        self.normalization.as_ref()
    }

    pub fn baseline_lambda0(&self) -> Option<f64> {
        self.baseline_lambda0
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn with_y(&self, y: Vec<f64>) -> StrainSeries {
        StrainSeries { y, ..self.clone() }
    }
}

/// One train crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainEvent {
    pub event_id: String,
    pub series: StrainSeries,
    /// Recorded speed, m/s.
    pub speed: f64,
    pub features: BwimFeatures,
    pub label: Option<TrainClass>,
}

impl StrainEvent {
    pub fn new(
        event_id: impl Into<String>,
        series: StrainSeries,
        speed: f64,
        features: BwimFeatures,
    ) -> Result<Self> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::invalid(format!("speed must be positive, got {speed}")));
        }
        features.validate()?;
        Ok(StrainEvent {
            event_id: event_id.into(),
            series,
            speed,
            features,
            label: None,
        })
    }
}

fn check_strictly_increasing(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} must be finite")));
    }
    if let Some(i) = xs.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "{what} not strictly increasing at sample {}",
            i + 1
        )));
    }
    Ok(())
}

/// Mean of the first `window_samples` wavelengths.
pub fn compute_baseline(raw: &RawFbgSeries, window_samples: usize) -> Result<f64> {
    if raw.is_empty() {
        return Err(Error::invalid("empty series"));
    }
    if window_samples == 0 || window_samples > raw.len() {
        return Err(Error::invalid(format!(
            "baseline window must be in 1..={}, got {window_samples}",
            raw.len()
        )));
    }
    Ok(mean(&raw.wavelengths[..window_samples]))
}

/// `(1/k) * Δλ/λ0 * 1e6`, the micro-strain for a single wavelength shift.
pub fn microstrain_from_shift(delta_lambda: f64, lambda0: f64, gauge_factor: f64) -> f64 {
    delta_lambda / lambda0 / gauge_factor * 1e6
}

/// Micro-strain series from raw wavelengths against the reference `lambda0`.
pub fn wavelength_to_microstrain(
    raw: &RawFbgSeries,
    gauge_factor: f64,
    lambda0: f64,
) -> Result<StrainSeries> {
    if !(gauge_factor.is_finite() && gauge_factor > 0.0) {
        return Err(Error::invalid(format!(
            "gauge factor must be positive, got {gauge_factor}"
        )));
    }
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(Error::invalid(format!("lambda0 must be positive, got {lambda0}")));
    }
    let y = raw
        .wavelengths
        .iter()
        .map(|l| microstrain_from_shift(l - lambda0, lambda0, gauge_factor))
        .collect();
    let t0 = raw.timestamps[0];
    let x = raw.timestamps.iter().map(|t| t - t0).collect();
    let mut series = StrainSeries::new(x, y, InputAxis::Time)?;
    series.baseline_lambda0 = Some(lambda0);
    Ok(series)
}

/// Centered moving average; windows are truncated at the ends of the record.
pub fn lowpass_filter(series: &StrainSeries, window_samples: usize) -> Result<StrainSeries> {
    let n = series.len();
    if window_samples == 0 || window_samples % 2 == 0 || window_samples > n {
        return Err(Error::invalid(format!(
            "filter window must be odd and in 1..={n}, got {window_samples}"
        )));
    }
    let half = window_samples / 2;
    let y = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let w = &series.y[lo..=hi];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect();
    Ok(series.with_y(y))
}

/// Map elapsed time to travelled distance at the recorded speed.
pub fn time_to_distance(series: &StrainSeries, speed: f64) -> Result<StrainSeries> {
    if !(speed.is_finite() && speed > 0.0) {
        return Err(Error::invalid(format!("speed must be positive, got {speed}")));
    }
    if series.axis != InputAxis::Time {
        return Err(Error::invalid(format!(
            "time_to_distance expects a time-indexed series, got {:?}",
            series.axis
        )));
    }
    let t0 = series.x[0];
    let x = series.x.iter().map(|t| speed * (t - t0)).collect();
    Ok(StrainSeries {
        x,
        axis: InputAxis::Distance,
        ..series.clone()
    })
}

/// Population mean and sd of the inputs of one series.
pub fn input_stats(series: &StrainSeries) -> (f64, f64) {
    (mean(&series.x), population_sd(&series.x))
}

/// Population mean and sd over the concatenated inputs of several series.
pub fn pooled_input_stats<'a>(series: impl IntoIterator<Item = &'a StrainSeries>) -> Result<(f64, f64)> {
    let all: Vec<f64> = series.into_iter().flat_map(|s| s.x.iter().copied()).collect();
    if all.len() < 2 {
        return Err(Error::DegenerateInput("fewer than two pooled inputs".into()));
    }
    Ok((mean(&all), population_sd(&all)))
}

/// Z-score an event's inputs with its own mean and sd and divide the response by
/// its peak magnitude.
pub fn normalize_event(series: &StrainSeries) -> Result<(StrainSeries, NormalizationParams)> {
    if series.len() < 2 {
        return Err(Error::DegenerateInput("need at least two samples".into()));
    }
    let (x_mean, x_sd) = input_stats(series);
    normalize_with(series, x_mean, x_sd)
}

/// Normalize with externally supplied input statistics (for pooled scaling).
pub fn normalize_with(
    series: &StrainSeries,
    x_mean: f64,
    x_sd: f64,
) -> Result<(StrainSeries, NormalizationParams)> {
    if !(x_sd.is_finite() && x_sd > 0.0) {
        return Err(Error::DegenerateInput("inputs have zero spread".into()));
    }
    let y_scale = series.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if y_scale <= 0.0 {
        return Err(Error::DegenerateInput("response is identically zero".into()));
    }
    let params = NormalizationParams {
        x_mean,
        x_sd,
        y_scale,
        baseline_lambda0: series.baseline_lambda0,
    };
    let x: Vec<f64> = series.x.iter().map(|&v| params.normalize_x(v)).collect();
    if let Some(&bad) = x.iter().find(|v| v.abs() > NORMALIZED_INPUT_LIMIT) {
        return Err(Error::DomainOverflow {
            value: bad,
            half_width: NORMALIZED_INPUT_LIMIT,
        });
    }
    let y = series.y.iter().map(|&v| params.normalize_y(v)).collect();
    let out = StrainSeries {
        x,
        y,
        axis: InputAxis::Normalized,
        baseline_lambda0: series.baseline_lambda0,
        normalization: Some(params),
    };
    Ok((out, params))
}

/// Input scaling applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// One input mean and sd shared by every event; responses scaled per event.
    Pooled,
    /// Each event z-scored with its own input mean and sd.
    PerEvent,
}

/// An event with its time axis replaced by travelled distance.
pub fn event_to_distance(event: &StrainEvent) -> Result<StrainEvent> {
    Ok(StrainEvent {
        series: time_to_distance(&event.series, event.speed)?,
        ..event.clone()
    })
}

/// Normalize distance-indexed events. The per-event results let callers
/// reject individual events (for example on domain overflow) and keep the rest.
pub fn normalize_events(events: &[StrainEvent], mode: Normalization) -> Result<Vec<Result<StrainEvent>>> {
    let pooled = match mode {
        Normalization::Pooled => Some(pooled_input_stats(events.iter().map(|e| &e.series))?),
        Normalization::PerEvent => None,
    };
    Ok(events
        .iter()
        .map(|ev| {
            let (series, _) = match pooled {
                Some((m, sd)) => normalize_with(&ev.series, m, sd)?,
                None => normalize_event(&ev.series)?,
            };
            Ok(StrainEvent {
                series,
                ..ev.clone()
            })
        })
        .collect())
}

/// Map normalized inputs and model values back to metres and micro-strain.
pub fn denormalize_prediction(
    x: &[f64],
    values: &[f64],
    params: &NormalizationParams,
) -> (Vec<f64>, Vec<f64>) {
    (
        x.iter().map(|&v| params.denormalize_x(v)).collect(),
        values.iter().map(|&v| params.denormalize_y(v)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(wl: &[f64]) -> RawFbgSeries {
        let t = (0..wl.len()).map(|i| i as f64 * 0.01).collect();
        RawFbgSeries::new(t, wl.to_vec(), "west").unwrap()
    }

    fn series(x: &[f64], y: &[f64]) -> StrainSeries {
        StrainSeries::new(x.to_vec(), y.to_vec(), InputAxis::Distance).unwrap()
    }

    #[test]
    fn baseline_is_window_mean() {
        assert_eq!(compute_baseline(&raw(&[1550.0, 1550.0, 1550.2]), 2).unwrap(), 1550.0);
        let b = compute_baseline(&raw(&[1550.0, 1550.4]), 2).unwrap();
        assert!((b - 1550.2).abs() < 1e-9);
        assert!(compute_baseline(&raw(&[1550.0, 1550.4]), 0).is_err());
        assert!(compute_baseline(&raw(&[1550.0, 1550.4]), 3).is_err());
    }

    #[test]
    fn raw_series_invariants() {
        assert!(RawFbgSeries::new(vec![0.0], vec![1.0], "s").is_err());
        assert!(RawFbgSeries::new(vec![0.0, 0.0], vec![1.0, 1.0], "s").is_err());
        assert!(RawFbgSeries::new(vec![0.0, 1.0], vec![1.0, -1.0], "s").is_err());
        assert!(RawFbgSeries::new(vec![0.0, 1.0], vec![1.0, f64::NAN], "s").is_err());
    }

    #[test]
    fn microstrain_conversion() {
        let r = raw(&[1550.0; 5]);
        let s = wavelength_to_microstrain(&r, DEFAULT_GAUGE_FACTOR, 1550.0).unwrap();
        assert!(s.y().iter().all(|&v| v == 0.0));
        assert_eq!(s.axis(), InputAxis::Time);

        let lambda0 = 1000.0;
        let r = raw(&[lambda0, lambda0 * (1.0 + 7.8e-7)]);
        let s = wavelength_to_microstrain(&r, 0.78, lambda0).unwrap();
        assert!((s.y()[1] - 1.0).abs() < 1e-6, "{}", s.y()[1]);

        assert!(wavelength_to_microstrain(&r, 0.0, lambda0).is_err());
        assert!(wavelength_to_microstrain(&r, 0.78, -1.0).is_err());
        assert_eq!(DEFAULT_GAUGE_FACTOR, 0.78);
    }

    #[test]
    fn filter_examples() {
        let s = series(&[0.0, 1.0, 2.0], &[0.0, 3.0, 0.0]);
        let f = lowpass_filter(&s, 3).unwrap();
        assert_eq!(f.y(), &[1.5, 1.0, 1.5]);
        assert_eq!(lowpass_filter(&s, 1).unwrap(), s);
        assert!(lowpass_filter(&s, 2).is_err());
        assert!(lowpass_filter(&s, 5).is_err());
        let c = series(&[0.0, 1.0, 2.0, 3.0, 4.0], &[2.5; 5]);
        assert_eq!(lowpass_filter(&c, 5).unwrap().y(), &[2.5; 5]);
    }

    #[test]
    fn distance_mapping() {
        let s = StrainSeries::new(vec![0.0, 1.0, 2.0], vec![0.0; 3], InputAxis::Time).unwrap();
        let d = time_to_distance(&s, 30.0).unwrap();
        assert_eq!(d.x(), &[0.0, 30.0, 60.0]);
        assert_eq!(d.axis(), InputAxis::Distance);
        assert_eq!(time_to_distance(&s, 1.0).unwrap().x(), s.x());
        assert!(time_to_distance(&s, 0.0).is_err());
        assert!(time_to_distance(&d, 1.0).is_err());
    }

    #[test]
    fn normalization_examples() {
        let s = series(&[0.0, 1.0, 2.0], &[1.0, -50.0, 10.0]);
        let (n, p) = normalize_event(&s).unwrap();
        let expect = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in n.x().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(p.y_scale, 50.0);
        assert_eq!(n.y().iter().fold(0.0f64, |m, v| m.max(v.abs())), 1.0);

        let (again, _) = normalize_event(&n).unwrap();
        for (a, b) in again.x().iter().zip(n.x()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(again.y(), n.y());

        let p = NormalizationParams { x_mean: 13.4, x_sd: 2.0, y_scale: 50.0, baseline_lambda0: None };
        assert_eq!(p.denormalize_y(1.0), 50.0);
        assert_eq!(p.denormalize_x(0.0), 13.4);
    }

    #[test]
    fn normalization_errors() {
        let flat = series(&[0.0, 1.0], &[0.0, 0.0]);
        assert!(matches!(normalize_event(&flat), Err(Error::DegenerateInput(_))));
        // one far-away sample pushes beyond three standard deviations
        let mut x: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        x.push(100.0);
        let y = vec![1.0; x.len()];
        let s = series(&x, &y);
        assert!(matches!(normalize_event(&s), Err(Error::DomainOverflow { .. })));
        assert!(matches!(normalize_with(&s, 0.0, 0.0), Err(Error::DegenerateInput(_))));
    }

    fn increasing() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.01f64..2.0, n),
                proptest::collection::vec(-80.0f64..80.0, n),
            )
        })
        .prop_map(|(steps, y)| {
            let mut acc = 0.0;
            let x = steps.iter().map(|s| { acc += s; acc }).collect();
            (x, y)
        })
    }

    proptest! {
        #[test]
        fn normalize_round_trip((x, y) in increasing()) {
            let s = series(&x, &y);
            let (mean_x, sd_x) = input_stats(&s);
            // wide pooled scale keeps every event inside the domain
            if let Ok((n, p)) = normalize_with(&s, mean_x, sd_x) {
                prop_assert!(mean(n.x()).abs() < 1e-9);
                prop_assert!((population_sd(n.x()) - 1.0).abs() < 1e-9);
                let (bx, by) = denormalize_prediction(n.x(), n.y(), &p);
                for (a, b) in bx.iter().zip(&x) {
                    prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
                }
                for (a, b) in by.iter().zip(&y) {
                    prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
                }
            }
        }

        #[test]
        fn conversion_is_linear(d in -0.5f64..0.5, a in 0.1f64..5.0, lambda0 in 800.0f64..1600.0) {
            let u = microstrain_from_shift(d, lambda0, 0.78);
            let v = microstrain_from_shift(a * d, lambda0, 0.78);
            prop_assert!((a * u - v).abs() <= 1e-12 * v.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn filter_shift_equivariant(y in proptest::collection::vec(-10.0f64..10.0, 12..40), c in -5.0f64..5.0) {
            let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
            let w = 5;
            let base = lowpass_filter(&series(&x, &y), w).unwrap();
            // shift by one sample: interior outputs move with the input
            let shifted: Vec<f64> = std::iter::once(c).chain(y.iter().copied()).collect();
            let xs: Vec<f64> = (0..shifted.len()).map(|i| i as f64).collect();
            let sh = lowpass_filter(&series(&xs, &shifted), w).unwrap();
            for i in w..y.len() - w {
                prop_assert!((base.y()[i] - sh.y()[i + 1]).abs() < 1e-12);
            }
        }
    }
}
