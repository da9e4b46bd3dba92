//! Inject a speed error into one crossing of a two-fleet run and look for it in
//! the correlation report.

use strainfield::classify::{classify_event, TrainClass};
use strainfield::hsgp::HsgpBasis;
use strainfield::inference::{run_sampler, SamplerConfig};
use strainfield::ingest::{event_to_distance, normalize_events, Normalization};
use strainfield::model::{EventDataset, ModelPriors};
use strainfield::monitor::{block_means, correlation_report, MonitorConfig};
use strainfield::simulate::{inject_speed_error, make_fleet_with, FleetOptions, NoiseLevel, Sampling};

fn main() -> strainfield::Result<()> {
    let options = FleetOptions {
        noise: NoiseLevel::RelativeToPeak(0.05),
        sampling: Sampling::SamplesPerEvent(800),
        ..FleetOptions::default()
    };
    let mut raw = Vec::new();
    for (class, seed) in [(TrainClass::Type350, 350), (TrainClass::Type22x, 220)] {
        raw.extend(make_fleet_with(class, 5, seed, &options)?.into_iter().map(|s| s.event));
    }
    raw[0] = inject_speed_error(&raw[0], 1.3)?;
    println!("{} recorded with a 30% speed error", raw[0].event_id);

    let by_distance = raw.iter().map(event_to_distance).collect::<strainfield::Result<Vec<_>>>()?;
    let events = normalize_events(&by_distance, Normalization::Pooled)?
        .into_iter()
        .collect::<strainfield::Result<Vec<_>>>()?;
    let labels: Vec<TrainClass> = events.iter().map(|e| classify_event(&e.features)).collect();

    let data = EventDataset::new(&events, HsgpBasis::default())?;
    let config = SamplerConfig {
        chains: 2,
        warmup: 500,
        samples: 300,
        seed: 3,
        ..SamplerConfig::default()
    };
    let samples = run_sampler(&data, &ModelPriors::default(), &config)?;
    let report = correlation_report(&samples, &data, &labels, &MonitorConfig::default())?;

    for ((a, b), m) in block_means(&report.matrix, &report.labels) {
        println!("mean correlation {a} x {b}: {m:.3}");
    }
    println!("{}", report.rule);
    for (id, f) in report.event_ids.iter().zip(&report.flags) {
        let mark = if f.flagged { "  <- flagged" } else { "" };
        println!("{id}: score {:.4}{mark}", f.score.unwrap_or(f64::NAN));
    }
    Ok(())
}
