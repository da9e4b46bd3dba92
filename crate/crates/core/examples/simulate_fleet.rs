//! Simulate a few crossings of each fleet and print their axle features and
//! classification.

use strainfield::classify::{classify_event, mean_axle_separation, TrainClass};
use strainfield::simulate::make_fleet;

fn main() -> strainfield::Result<()> {
    for (class, seed) in [(TrainClass::Type350, 350), (TrainClass::Type22x, 220)] {
        for sim in make_fleet(class, 3, seed)? {
            let ev = &sim.event;
            println!(
                "{:8} speed {:5.1} m/s  {} samples  axles {}  mean sep {:5.2} m  peak {:5.1} ue  -> {}",
                ev.event_id,
                ev.speed,
                ev.series.len(),
                ev.features.axle_count,
                mean_axle_separation(&ev.features)?,
                sim.peak_truth(),
                classify_event(&ev.features)
            );
        }
    }
    Ok(())
}
