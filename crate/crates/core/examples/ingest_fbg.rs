//! Round trip a simulated crossing through the FBG wavelength record and the
//! ingest chain: baseline, micro-strain, smoothing, distance, normalization.

use strainfield::classify::TrainClass;
use strainfield::ingest::{
    compute_baseline, event_to_distance, lowpass_filter, normalize_event, wavelength_to_microstrain,
    DEFAULT_BASELINE_WINDOW, DEFAULT_FILTER_WINDOW, DEFAULT_GAUGE_FACTOR,
};
use strainfield::simulate::make_fleet;

fn main() -> strainfield::Result<()> {
    let sim = make_fleet(TrainClass::Type22x, 1, 7)?.remove(0);
    let raw = sim.to_nominal_raw()?;
    let lambda0 = compute_baseline(&raw, DEFAULT_BASELINE_WINDOW)?;
    println!("{} wavelength samples, baseline {lambda0:.6} nm", raw.len());

    let strain = wavelength_to_microstrain(&raw, DEFAULT_GAUGE_FACTOR, lambda0)?;
    let smooth = lowpass_filter(&strain, DEFAULT_FILTER_WINDOW)?;
    let peak = |y: &[f64]| y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!(
        "peak strain: truth {:.2}  raw {:.2}  filtered {:.2} ue",
        sim.peak_truth(),
        peak(strain.y()),
        peak(smooth.y())
    );

    let mut event = sim.event.clone();
    event.series = smooth;
    let by_distance = event_to_distance(&event)?;
    let x = by_distance.series.x();
    println!("distance axis {:.1}..{:.1} m at {:.1} m/s", x[0], x[x.len() - 1], event.speed);

    let (normalized, params) = normalize_event(&by_distance.series)?;
    let nx = normalized.x();
    println!(
        "normalized x in [{:.3}, {:.3}], {params:?}",
        nx[0],
        nx[nx.len() - 1]
    );
    Ok(())
}
