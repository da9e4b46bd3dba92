//! Posterior predictive envelopes of individual event functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::PosteriorSamples;
use crate::hsgp::{build_design_matrix, spectral_weights, KernelHyper};
use crate::model::{EventDataset, ParameterLayout};
use crate::stats::sorted_quantile;
use crate::{Error, Result};

/// Central credible mass of the reported bands.
pub const CREDIBLE_MASS: f64 = 0.90;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// One row per posterior draw, chain-major.
    pub draws: Vec<Vec<f64>>,
}

fn model_layout(samples: &PosteriorSamples, data: &EventDataset) -> Result<ParameterLayout> {
    let layout = samples
        .layout()
        .ok_or_else(|| Error::invalid("samples do not come from the event model"))?;
    if layout != data.layout() {
        return Err(Error::invalid(format!(
            "samples have layout {layout:?} but the dataset has {:?}",
            data.layout()
        )));
    }
    Ok(layout)
}

fn function_draws(
    samples: &PosteriorSamples,
    data: &EventDataset,
    event_index: usize,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let layout = model_layout(samples, data)?;
    if event_index >= layout.events {
        return Err(Error::invalid(format!(
            "event index {event_index} out of range for {} events",
            layout.events
        )));
    }
    let basis = data.basis();
    let design = build_design_matrix(grid, basis)?;
    let m = basis.size();
    let mut coeffs = vec![0.0; m];
    samples
        .iter_draws()
        .map(|d| {
            let hyper = KernelHyper::new(d[ParameterLayout::ALPHA], d[ParameterLayout::ELL])?;
            let w = spectral_weights(basis, &hyper);
            let b0 = layout.beta(event_index, 0);
            for j in 0..m {
                coeffs[j] = w[j] * d[b0 + j];
            }
            Ok(design.apply(&coeffs))
        })
        .collect()
}

fn summarise(grid: &[f64], draws: Vec<Vec<f64>>) -> PredictiveSummary {
    let g = grid.len();
    let n = draws.len() as f64;
    let tail = (1.0 - CREDIBLE_MASS) / 2.0;
    let mut mean = vec![0.0; g];
    let mut lower = vec![0.0; g];
    let mut upper = vec![0.0; g];
    let mut column = Vec::with_capacity(draws.len());
    for i in 0..g {
        column.clear();
        column.extend(draws.iter().map(|d| d[i]));
        mean[i] = column.iter().sum::<f64>() / n;
        column.sort_by(f64::total_cmp);
        lower[i] = sorted_quantile(&column, tail);
        upper[i] = sorted_quantile(&column, 1.0 - tail);
    }
    PredictiveSummary {
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
        draws,
    }
}

/// Noise-free posterior of `f_k` on `grid`: mean and central 90% band.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    data: &EventDataset,
    event_index: usize,
    grid: &[f64],
) -> Result<PredictiveSummary> {
    let draws = function_draws(samples, data, event_index, grid)?;
    Ok(summarise(grid, draws))
}

/// Predictive distribution of new observations: each function draw plus
/// `Normal(0, σ_k)` noise from that draw.
pub fn posterior_predictive_with_noise(
    samples: &PosteriorSamples,
    data: &EventDataset,
    event_index: usize,
    grid: &[f64],
    seed: u64,
) -> Result<PredictiveSummary> {
    let layout = model_layout(samples, data)?;
    let mut draws = function_draws(samples, data, event_index, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (row, d) in draws.iter_mut().zip(samples.iter_draws()) {
        let sigma = d[layout.sigma(event_index)];
        for v in row.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * e;
        }
    }
    Ok(summarise(grid, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsgp::HsgpBasis;
    use crate::inference::DrawStats;

    fn fake_samples(layout: ParameterLayout, draws: usize) -> PosteriorSamples {
        let mut values = Vec::new();
        for i in 0..draws {
            values.push(1.0);
            values.push(0.8);
            values.extend(std::iter::repeat_n(0.1, layout.events));
            for j in 0..layout.events * layout.basis_size {
                values.push(((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
            }
        }
        let stats = vec![
            DrawStats { divergent: false, tree_depth: 1, n_leapfrog: 1, energy: 0.0, accept_stat: 1.0, step_size: 0.1 };
            draws
        ];
        PosteriorSamples::from_parts(layout.names(), 1, draws, values, stats, Some(layout)).unwrap()
    }

    #[test]
    fn boundary_and_band_order() {
        let basis = HsgpBasis::new(3.0, 6).unwrap();
        let data = EventDataset::from_xy(vec![(vec![0.0, 1.0], vec![0.1, 0.2]); 2], basis).unwrap();
        let samples = fake_samples(data.layout(), 40);
        let grid = [-3.0, -1.0, 0.0, 2.0, 3.0];
        let p = posterior_predictive(&samples, &data, 1, &grid).unwrap();
        assert_eq!((p.mean[0], p.lower[0], p.upper[0]), (0.0, 0.0, 0.0));
        assert_eq!((p.mean[4], p.lower[4], p.upper[4]), (0.0, 0.0, 0.0));
        for i in 0..grid.len() {
            assert!(p.upper[i] >= p.lower[i]);
        }
        assert_eq!(p.draws.len(), 40);

        let noisy = posterior_predictive_with_noise(&samples, &data, 1, &grid, 9).unwrap();
        let resid: Vec<f64> = noisy
            .draws
            .iter()
            .zip(&p.draws)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v))
            .collect();
        let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.02, "{sd}");
        assert!(posterior_predictive(&samples, &data, 0, &[3.5]).is_err());
        assert!(posterior_predictive(&samples, &data, 2, &grid).is_err());
    }
}
