//! The sampler on a target with a known answer.

use strainfield::inference::{sample_target, Diagnostics, LogDensity, SamplerConfig};

struct Gaussian {
    mean: [f64; 2],
    sd: [f64; 2],
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> strainfield::Result<f64> {
        let mut lp = 0.0;
        for i in 0..2 {
            let z = (x[i] - self.mean[i]) / self.sd[i];
            lp -= 0.5 * z * z;
            grad[i] = -z / self.sd[i];
        }
        Ok(lp)
    }
}

fn main() -> strainfield::Result<()> {
    let target = Gaussian {
        mean: [0.0, 3.0],
        sd: [1.0, 0.1],
    };
    let samples = sample_target(&target, &SamplerConfig::default())?;
    let diag = Diagnostics::compute(&samples)?;
    for (p, name) in samples.names().iter().enumerate() {
        println!(
            "{name}: mean {:.3} sd {:.3} rhat {:.3} ess {:.0}",
            samples.parameter_mean(p),
            samples.parameter_sd(p),
            diag.rhat_of(name).unwrap_or(f64::NAN),
            diag.ess_of(name).unwrap_or(f64::NAN)
        );
    }
    println!("divergences: {}", samples.divergence_count());
    Ok(())
}
