//! Fit the multilevel model to a handful of simulated crossings and compare the
//! posterior envelope of one event with its noise-free truth.

use strainfield::classify::TrainClass;
use strainfield::hsgp::HsgpBasis;
use strainfield::inference::{posterior_predictive, run_sampler, Diagnostics, SamplerConfig};
use strainfield::ingest::{event_to_distance, normalize_events, Normalization};
use strainfield::model::{EventDataset, ModelPriors};
use strainfield::simulate::{make_fleet_with, FleetOptions, NoiseLevel, Sampling};

fn main() -> strainfield::Result<()> {
    let options = FleetOptions {
        noise: NoiseLevel::RelativeToPeak(0.05),
        sampling: Sampling::SamplesPerEvent(800),
        ..FleetOptions::default()
    };
    let sims = make_fleet_with(TrainClass::Type350, 4, 1, &options)?;
    let by_distance = sims
        .iter()
        .map(|s| event_to_distance(&s.event))
        .collect::<strainfield::Result<Vec<_>>>()?;
    let events = normalize_events(&by_distance, Normalization::Pooled)?
        .into_iter()
        .collect::<strainfield::Result<Vec<_>>>()?;

    let data = EventDataset::new(&events, HsgpBasis::default())?;
    let config = SamplerConfig {
        chains: 2,
        warmup: 500,
        samples: 300,
        seed: 42,
        ..SamplerConfig::default()
    };
    let samples = run_sampler(&data, &ModelPriors::default(), &config)?;
    let diag = Diagnostics::compute(&samples)?;
    for name in ["alpha", "ell", "sigma_1"] {
        let p = samples.index_of(name).expect("model parameter");
        println!(
            "{name:>9}: {:.4} +- {:.4} (rhat {:.3})",
            samples.parameter_mean(p),
            samples.parameter_sd(p),
            diag.rhat_of(name).unwrap_or(f64::NAN)
        );
    }

    let norm = events[0].series.normalization().expect("normalized").clone();
    let grid: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
    let pred = posterior_predictive(&samples, &data, 0, &grid)?;
    println!("{:>7} {:>8} {:>8} {:>8} {:>8}", "x", "truth", "mean", "lower", "upper");
    for (i, &x) in grid.iter().enumerate() {
        let truth = norm.normalize_y(sims[0].truth_at_distance(norm.denormalize_x(x)));
        println!(
            "{x:>7.2} {truth:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            pred.mean[i], pred.lower[i], pred.upper[i]
        );
    }
    Ok(())
}
