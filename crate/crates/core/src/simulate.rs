//! Synthetic train crossings built from per-axle strain influence lines.
//!
//! The bridge is a simply supported span with a triangular influence line that
//! peaks at the sensor. A crossing is the weighted sum of that line over the
//! axles, sampled in time at the train's speed, with Gaussian noise on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::classify::{BwimFeatures, TrainClass, COMMUTER_AXLE_COUNT};
use crate::ingest::{InputAxis, RawFbgSeries, StrainEvent, StrainSeries, DEFAULT_GAUGE_FACTOR};
use crate::stats::derive_seed;
use crate::{Error, Result};

/// Distance of record kept before the first axle enters and after the last
/// one leaves, metres.
pub const BUFFER_M: f64 = 20.0;
/// Fewest samples a simulated crossing may have.
pub const MIN_SAMPLES: usize = 750;
/// Reference wavelength used when writing simulated raw records, nm.
pub const NOMINAL_LAMBDA0_NM: f64 = 1550.0;

pub const DEFAULT_SPAN_M: f64 = 26.8;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 300.0;
/// με per kN at the influence-line peak; puts nominal fleet peaks near 60 με.
pub const DEFAULT_INFLUENCE_SCALE: f64 = 0.16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub name: TrainClass,
    /// kN per axle.
    pub axle_weights: Vec<f64>,
    /// Metres behind the first axle; starts at 0 and strictly increases.
    pub axle_positions: Vec<f64>,
    /// m/s.
    pub speed: f64,
}

/// Bogie layout of a four-car, sixteen-axle unit: `(within bogie, bogie
/// centres within a car, between cars)`.
fn template_geometry(class: TrainClass) -> Result<(f64, f64, f64, f64)> {
    match class {
        TrainClass::Type350 => Ok((2.6, 10.4, 3.2, 110.0)),
        TrainClass::Type22x => Ok((2.6, 14.3, 4.0, 130.0)),
        TrainClass::Other => Err(Error::invalid("no fleet template for class `other`")),
    }
}

fn template_spacings(bogie: f64, car: f64, coupling: f64) -> Vec<f64> {
    let cars = COMMUTER_AXLE_COUNT / 4;
    let mut out = Vec::with_capacity(COMMUTER_AXLE_COUNT - 1);
    for c in 0..cars {
        out.extend([bogie, car, bogie]);
        if c + 1 < cars {
            out.push(coupling);
        }
    }
    out
}

impl TrainSpec {
    pub fn new(
        name: TrainClass,
        axle_weights: Vec<f64>,
        axle_positions: Vec<f64>,
        speed: f64,
    ) -> Result<Self> {
        let spec = TrainSpec {
            name,
            axle_weights,
            axle_positions,
            speed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Build from consecutive axle spacings instead of positions.
    pub fn from_spacings(name: TrainClass, axle_weights: Vec<f64>, spacings: &[f64], speed: f64) -> Result<Self> {
        let mut positions = Vec::with_capacity(spacings.len() + 1);
        positions.push(0.0);
        for s in spacings {
            positions.push(positions.last().unwrap() + s);
        }
        TrainSpec::new(name, axle_weights, positions, speed)
    }

    /// The un-jittered fleet template at the given speed.
    pub fn template(class: TrainClass, speed: f64) -> Result<Self> {
        let (bogie, car, coupling, weight) = template_geometry(class)?;
        let spacings = template_spacings(bogie, car, coupling);
        TrainSpec::from_spacings(class, vec![weight; COMMUTER_AXLE_COUNT], &spacings, speed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axle_positions.is_empty() || self.axle_positions.len() != self.axle_weights.len() {
            return Err(Error::invalid(format!(
                "{} axle positions for {} weights",
                self.axle_positions.len(),
                self.axle_weights.len()
            )));
        }
        if self.axle_positions[0] != 0.0 {
            return Err(Error::invalid("first axle position must be 0"));
        }
        if self.axle_positions.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::invalid("axle positions must strictly increase"));
        }
        if self.axle_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("axle weights must be finite and non-negative"));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::invalid(format!("speed must be positive, got {}", self.speed)));
        }
        Ok(())
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axle_positions.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// First to last axle, metres.
    pub fn length(&self) -> f64 {
        *self.axle_positions.last().unwrap()
    }

    pub fn features(&self) -> Result<BwimFeatures> {
        BwimFeatures::new(self.axle_weights.len(), self.axle_weights.clone(), self.spacings())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSpec {
    /// Metres.
    pub span: f64,
    /// Sensor location as a fraction of the span.
    pub sensor_position: f64,
    /// με per kN at the influence-line peak.
    pub influence_scale: f64,
}

impl Default for BridgeSpec {
    fn default() -> Self {
        BridgeSpec {
            span: DEFAULT_SPAN_M,
            sensor_position: 0.5,
            influence_scale: DEFAULT_INFLUENCE_SCALE,
        }
    }
}

impl BridgeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.span.is_finite() && self.span > 0.0) {
            return Err(Error::invalid(format!("span must be positive, got {}", self.span)));
        }
        if !(self.sensor_position > 0.0 && self.sensor_position < 1.0) {
            return Err(Error::invalid(format!(
                "sensor position must be inside (0, 1), got {}",
                self.sensor_position
            )));
        }
        if !(self.influence_scale.is_finite() && self.influence_scale > 0.0) {
            return Err(Error::invalid("influence scale must be positive"));
        }
        Ok(())
    }
}

/// Triangular influence ordinate of a unit load at `load_position` metres from
/// the left support.
pub fn influence_line(load_position: f64, bridge: &BridgeSpec) -> f64 {
    let peak = bridge.sensor_position * bridge.span;
    if !(0.0..=bridge.span).contains(&load_position) {
        0.0
    } else if load_position <= peak {
        load_position / peak
    } else {
        (bridge.span - load_position) / (bridge.span - peak)
    }
}

/// Noise-free strain (με) when the first axle has travelled `distance` metres
/// since the record started.
pub fn strain_at_distance(train: &TrainSpec, bridge: &BridgeSpec, distance: f64) -> f64 {
    let front = distance - BUFFER_M;
    bridge.influence_scale
        * train
            .axle_weights
            .iter()
            .zip(&train.axle_positions)
            .map(|(w, p)| w * influence_line(front - p, bridge))
            .sum::<f64>()
}

/// Distance covered by a full record: buffers, train length and span.
pub fn record_distance(train: &TrainSpec, bridge: &BridgeSpec) -> f64 {
    2.0 * BUFFER_M + train.length() + bridge.span
}

/// A simulated crossing with everything needed to check recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedEvent {
    /// Time-indexed, noisy micro-strain; `label` is left for the classifier.
    pub event: StrainEvent,
    /// Noise-free micro-strain on the same time grid.
    pub truth: Vec<f64>,
    pub train: TrainSpec,
    pub bridge: BridgeSpec,
}

impl SimulatedEvent {
    /// Noise-free strain at a travelled distance computed with the true speed.
    pub fn truth_at_distance(&self, distance: f64) -> f64 {
        strain_at_distance(&self.train, &self.bridge, distance)
    }

    pub fn peak_truth(&self) -> f64 {
        self.truth.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// The FBG wavelength record that converts back to this event's strain.
    pub fn to_raw(&self, lambda0: f64, gauge_factor: f64, sensor_id: &str) -> Result<RawFbgSeries> {
        let s = &self.event.series;
        let wl = s
            .y()
            .iter()
            .map(|ue| lambda0 * (1.0 + gauge_factor * ue * 1e-6))
            .collect();
        RawFbgSeries::new(s.x().to_vec(), wl, sensor_id)
    }

    pub fn to_nominal_raw(&self) -> Result<RawFbgSeries> {
        self.to_raw(NOMINAL_LAMBDA0_NM, DEFAULT_GAUGE_FACTOR, "sim")
    }
}

pub fn simulate_event(
    train: &TrainSpec,
    bridge: &BridgeSpec,
    noise_sd: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<SimulatedEvent> {
    train.validate()?;
    bridge.validate()?;
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::invalid(format!("noise sd must be non-negative, got {noise_sd}")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
    }
    let duration = record_distance(train, bridge) / train.speed;
    let n = (duration * sample_rate).floor() as usize + 1;
    if n < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "sample rate {sample_rate} Hz gives {n} samples over the crossing, need {MIN_SAMPLES}"
        )));
    }
    let t: Vec<f64> = (0..n).map(|i| i as f64 / sample_rate).collect();
    let truth: Vec<f64> = t
        .iter()
        .map(|ti| strain_at_distance(train, bridge, train.speed * ti))
        .collect();
    let y = if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        truth.iter().map(|v| v + noise.sample(&mut rng)).collect()
    } else {
        truth.clone()
    };
    let series = StrainSeries::new(t, y, InputAxis::Time)?;
    let event = StrainEvent::new(
        format!("{}-{seed:016x}", train.name),
        series,
        train.speed,
        train.features()?,
    )?;
    Ok(SimulatedEvent {
        event,
        truth,
        train: train.clone(),
        bridge: *bridge,
    })
}

/// How the noise level of a fleet is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Fixed sd in με.
    Microstrain(f64),
    /// Sd as a fraction of each event's noise-free peak.
    RelativeToPeak(f64),
}

/// How densely each crossing is sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    RateHz(f64),
    /// The rate is chosen per event to give this many samples.
    SamplesPerEvent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetOptions {
    pub bridge: BridgeSpec,
    pub noise: NoiseLevel,
    pub sampling: Sampling,
    /// Uniform speed range, m/s.
    pub speed_range: (f64, f64),
    /// Relative half-width of the weight jitter.
    pub weight_jitter: f64,
    /// Relative half-width of the spacing jitter.
    pub spacing_jitter: f64,
}

impl Default for FleetOptions {
    fn default() -> Self {
        FleetOptions {
            bridge: BridgeSpec::default(),
            noise: NoiseLevel::Microstrain(1.0),
            sampling: Sampling::RateHz(DEFAULT_SAMPLE_RATE_HZ),
            speed_range: (25.0, 45.0),
            weight_jitter: 0.10,
            spacing_jitter: 0.02,
        }
    }
}

/// A template train with jittered weights, spacings and speed.
pub fn jittered_train(class: TrainClass, options: &FleetOptions, rng: &mut impl Rng) -> Result<TrainSpec> {
    let nominal = TrainSpec::template(class, 1.0)?;
    let (lo, hi) = options.speed_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::invalid(format!("bad speed range {lo}..{hi}")));
    }
    let jitter = |rng: &mut dyn rand::RngCore, rel: f64| 1.0 + rel * (2.0 * rng.random::<f64>() - 1.0);
    let weights = nominal
        .axle_weights
        .iter()
        .map(|w| w * jitter(rng, options.weight_jitter))
        .collect();
    let spacings: Vec<f64> = nominal
        .spacings()
        .iter()
        .map(|s| s * jitter(rng, options.spacing_jitter))
        .collect();
    let speed = lo + (hi - lo) * rng.random::<f64>();
    TrainSpec::from_spacings(class, weights, &spacings, speed)
}

/// `n_events` crossings of one fleet with the default options.
pub fn make_fleet(class: TrainClass, n_events: usize, seed: u64) -> Result<Vec<SimulatedEvent>> {
    make_fleet_with(class, n_events, seed, &FleetOptions::default())
}

/// Event `i` is generated from its own seed derived from `(seed, i)`, so the
/// output does not depend on scheduling. Ids are `<class>-<index>`.
pub fn make_fleet_with(
    class: TrainClass,
    n_events: usize,
    seed: u64,
    options: &FleetOptions,
) -> Result<Vec<SimulatedEvent>> {
    template_geometry(class)?;
    (0..n_events)
        .into_par_iter()
        .map(|i| {
            let event_seed = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(event_seed);
            let train = jittered_train(class, options, &mut rng)?;
            let rate = match options.sampling {
                Sampling::RateHz(r) => r,
                Sampling::SamplesPerEvent(n) => {
                    n as f64 * train.speed / record_distance(&train, &options.bridge)
                }
            };
            let noise_sd = match options.noise {
                NoiseLevel::Microstrain(sd) => sd,
                NoiseLevel::RelativeToPeak(rel) => {
                    let clean = simulate_event(&train, &options.bridge, 0.0, rate, 0)?;
                    rel * clean.peak_truth()
                }
            };
            let mut sim = simulate_event(&train, &options.bridge, noise_sd, rate, rng.random())?;
            sim.event.event_id = format!("{class}-{i:03}");
            Ok(sim)
        })
        .collect()
}

/// Multiply the recorded speed by `factor`; the strain record is untouched, so
/// the distance axis derived later is stretched by the same factor.
pub fn inject_speed_error(event: &StrainEvent, factor: f64) -> Result<StrainEvent> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("speed factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Err(Error::invalid("speed factor 1 is not an error"));
    }
    Ok(StrainEvent {
        speed: event.speed * factor,
        ..event.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{classify_event, mean_axle_separation};
    use crate::ingest::{normalize_event, time_to_distance};
    use proptest::prelude::*;

    fn single(weight: f64, position: f64) -> TrainSpec {
        TrainSpec::new(TrainClass::Other, vec![weight], vec![position], 30.0).unwrap()
    }

    #[test]
    fn influence_line_shape() {
        let b = BridgeSpec::default();
        assert_eq!(influence_line(0.0, &b), 0.0);
        assert_eq!(influence_line(b.span, &b), 0.0);
        assert_eq!(influence_line(b.span / 2.0, &b), 1.0);
        assert_eq!(influence_line(b.span / 4.0, &b), 0.5);
        assert_eq!(influence_line(-1.0, &b), 0.0);
        assert_eq!(influence_line(b.span + 1.0, &b), 0.0);
        let skew = BridgeSpec { sensor_position: 0.25, ..b };
        assert!((influence_line(0.625 * b.span, &skew) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn template_means_straddle_threshold() {
        for (class, sep) in [(TrainClass::Type350, 4.8), (TrainClass::Type22x, 6.0)] {
            let t = TrainSpec::template(class, 30.0).unwrap();
            let f = t.features().unwrap();
            assert_eq!(f.axle_count, 16);
            assert!((mean_axle_separation(&f).unwrap() - sep).abs() < 1e-12);
            assert_eq!(classify_event(&f), class);
        }
        assert!(TrainSpec::template(TrainClass::Other, 30.0).is_err());
    }

    #[test]
    fn single_axle_peak() {
        let b = BridgeSpec::default();
        let train = single(100.0, 0.0);
        // sample exactly when the axle is over the sensor
        let rate = 30.0 / (b.span / 2.0 + BUFFER_M) * 400.0;
        let sim = simulate_event(&train, &b, 0.0, rate, 1).unwrap();
        let peak = sim.truth.iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak - b.influence_scale * 100.0).abs() < 1e-9);
        assert_eq!(sim.truth, sim.event.series.y());
    }

    #[test]
    fn zero_weights_give_noise_only() {
        let train = TrainSpec::new(TrainClass::Other, vec![0.0, 0.0], vec![0.0, 3.0], 30.0).unwrap();
        let sim = simulate_event(&train, &BridgeSpec::default(), 0.5, 400.0, 3).unwrap();
        assert!(sim.truth.iter().all(|v| *v == 0.0));
        assert!(sim.event.series.y().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn superposition_is_exact() {
        let b = BridgeSpec::default();
        let both = TrainSpec::new(TrainClass::Other, vec![90.0, 120.0], vec![0.0, 7.5], 33.0).unwrap();
        let a = TrainSpec::new(TrainClass::Other, vec![90.0, 0.0], vec![0.0, 7.5], 33.0).unwrap();
        let c = TrainSpec::new(TrainClass::Other, vec![0.0, 120.0], vec![0.0, 7.5], 33.0).unwrap();
        let run = |t: &TrainSpec| simulate_event(t, &b, 0.0, 400.0, 0).unwrap().truth;
        let (s, sa, sc) = (run(&both), run(&a), run(&c));
        for i in 0..s.len() {
            assert!((s[i] - sa[i] - sc[i]).abs() <= 1e-12 * s[i].abs().max(1.0));
        }
    }

    #[test]
    fn record_covers_the_crossing() {
        let t = TrainSpec::template(TrainClass::Type22x, 40.0).unwrap();
        let b = BridgeSpec::default();
        let sim = simulate_event(&t, &b, 0.0, 300.0, 0).unwrap();
        let y = &sim.truth;
        assert_eq!(y[0], 0.0);
        assert_eq!(*y.last().unwrap(), 0.0);
        assert!(sim.event.series.len() >= MIN_SAMPLES);
        assert!(simulate_event(&t, &b, 0.0, 50.0, 0).is_err());
    }

    #[test]
    fn fleets_round_trip_and_repeat() {
        for class in [TrainClass::Type350, TrainClass::Type22x] {
            let fleet = make_fleet(class, 10, 5).unwrap();
            assert_eq!(fleet.len(), 10);
            for sim in &fleet {
                assert_eq!(classify_event(&sim.event.features), class);
                assert!((25.0..=45.0).contains(&sim.event.speed));
            }
            assert_eq!(fleet, make_fleet(class, 10, 5).unwrap());
        }
        assert!(make_fleet(TrainClass::Other, 1, 0).is_err());
    }

    #[test]
    fn fleet_peaks_are_tens_of_microstrain() {
        for class in [TrainClass::Type350, TrainClass::Type22x] {
            let fleet = make_fleet(class, 5, 2).unwrap();
            for sim in fleet {
                let p = sim.peak_truth();
                assert!((40.0..90.0).contains(&p), "{class} peak {p}");
            }
        }
    }

    #[test]
    fn relative_noise_and_sample_count() {
        let opts = FleetOptions {
            noise: NoiseLevel::RelativeToPeak(0.05),
            sampling: Sampling::SamplesPerEvent(800),
            ..FleetOptions::default()
        };
        let fleet = make_fleet_with(TrainClass::Type350, 3, 1, &opts).unwrap();
        for sim in fleet {
            let n = sim.event.series.len();
            assert!((799..=801).contains(&n), "{n}");
            let resid: Vec<f64> = sim.event.series.y().iter().zip(&sim.truth).map(|(a, b)| a - b).collect();
            let sd = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
            assert!((sd / sim.peak_truth() - 0.05).abs() < 0.01);
        }
    }

    #[test]
    fn speed_error_scales_distance() {
        let sim = &make_fleet(TrainClass::Type350, 1, 8).unwrap()[0];
        let bad = inject_speed_error(&sim.event, 1.3).unwrap();
        assert_eq!(bad.series.y(), sim.event.series.y());
        let d0 = time_to_distance(&sim.event.series, sim.event.speed).unwrap();
        let d1 = time_to_distance(&bad.series, bad.speed).unwrap();
        let range = |s: &StrainSeries| s.x().last().unwrap() - s.x()[0];
        assert!((range(&d1) / range(&d0) - 1.3).abs() < 1e-12);
        assert!(inject_speed_error(&sim.event, 1.0).is_err());
        assert!(inject_speed_error(&sim.event, 0.0).is_err());
    }

    #[test]
    fn raw_record_encodes_strain() {
        let sim = &make_fleet(TrainClass::Type22x, 1, 4).unwrap()[0];
        let raw = sim.to_nominal_raw().unwrap();
        let back = crate::ingest::wavelength_to_microstrain(&raw, DEFAULT_GAUGE_FACTOR, NOMINAL_LAMBDA0_NM).unwrap();
        for (a, b) in back.y().iter().zip(sim.event.series.y()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn speed_invariance_after_normalization(v1 in 20.0f64..50.0, v2 in 20.0f64..50.0) {
            // same distance grid at both speeds: the rate scales with speed
            let b = BridgeSpec::default();
            let run = |v: f64| {
                let t = TrainSpec::template(TrainClass::Type350, v).unwrap();
                let sim = simulate_event(&t, &b, 0.0, v * 25.3, 0).unwrap();
                let d = time_to_distance(&sim.event.series, v).unwrap();
                normalize_event(&d).unwrap().0
            };
            let (a, c) = (run(v1), run(v2));
            prop_assert_eq!(a.len(), c.len());
            for i in 0..a.len() {
                prop_assert!((a.x()[i] - c.x()[i]).abs() < 1e-9);
                prop_assert!((a.y()[i] - c.y()[i]).abs() < 1e-9);
            }
        }
    }
}
