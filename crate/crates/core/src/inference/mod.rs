//! Posterior sampling, convergence diagnostics and posterior prediction.
//!
//! The sampler is a multinomial no-U-turn Hamiltonian Monte Carlo with a
//! diagonal mass matrix, dual-averaging step size adaptation and expanding
//! variance-estimation windows during warmup. Chains run in parallel; each
//! draws from its own stream derived from `(seed, chain)` so results do not
//! depend on scheduling.

mod adapt;
pub mod diagnostics;
mod nuts;
pub mod predictive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    EventDataset, ModelPriors, MultilevelPosterior, ParameterLayout, ParameterState,
};
use crate::{Error, Result};

pub use diagnostics::{compute_ess_bulk, compute_rhat, split_rhat, Diagnostics};
pub use predictive::{posterior_predictive, posterior_predictive_with_noise, PredictiveSummary};

/// Attempts at drawing a finite initial point before giving up.
const INIT_ATTEMPTS: usize = 100;
/// Fraction of divergent post-warmup transitions that marks a run as failed.
const DIVERGENCE_LIMIT: f64 = 0.10;

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `position`, with its gradient written into `grad`.
    /// Errors are treated by the sampler as an infinitely unlikely point.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            seed: 0,
            target_acceptance: 0.8,
            max_tree_depth: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.warmup == 0 || self.samples == 0 || self.max_tree_depth == 0 {
            return Err(Error::invalid(
                "chains, warmup, samples and max_tree_depth must all be at least 1",
            ));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::invalid(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

/// Per-transition sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawStats {
    pub divergent: bool,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub energy: f64,
    pub accept_stat: f64,
    pub step_size: f64,
}

/// Post-warmup draws of every chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    names: Vec<String>,
    chains: usize,
    draws_per_chain: usize,
    /// `[chain][draw][parameter]`, flattened.
    values: Vec<f64>,
    /// `[chain][draw]`, flattened.
    stats: Vec<DrawStats>,
    layout: Option<ParameterLayout>,
    /// Set when more than a tenth of the transitions diverged.
    pub convergence_failure: bool,
}

impl PosteriorSamples {
    pub fn from_parts(
        names: Vec<String>,
        chains: usize,
        draws_per_chain: usize,
        values: Vec<f64>,
        stats: Vec<DrawStats>,
        layout: Option<ParameterLayout>,
    ) -> Result<Self> {
        if values.len() != chains * draws_per_chain * names.len() {
            return Err(Error::invalid("draw array does not match its declared shape"));
        }
        if !stats.is_empty() && stats.len() != chains * draws_per_chain {
            return Err(Error::invalid("draw statistics do not match the draw count"));
        }
        if let Some(l) = layout {
            if l.dim() != names.len() {
                return Err(Error::invalid("layout dimension does not match parameter names"));
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("draws contain NaN"));
        }
        let divergent = stats.iter().filter(|s| s.divergent).count();
        let total = (chains * draws_per_chain).max(1);
        Ok(PosteriorSamples {
            names,
            chains,
            draws_per_chain,
            values,
            stats,
            layout,
            convergence_failure: divergent as f64 > DIVERGENCE_LIMIT * total as f64,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws_per_chain
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    pub fn layout(&self) -> Option<ParameterLayout> {
        self.layout
    }

    pub fn stats(&self) -> &[DrawStats] {
        &self.stats
    }

    /// Parameter values of one draw.
    pub fn draw(&self, chain: usize, index: usize) -> &[f64] {
        let d = self.dim();
        let start = (chain * self.draws_per_chain + index) * d;
        &self.values[start..start + d]
    }

    /// Iterate over all draws, chain-major.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// One column split by chain.
    pub fn parameter_chains(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.draws_per_chain).map(|i| self.draw(c, i)[param]).collect())
            .collect()
    }

    pub fn parameter_mean(&self, param: usize) -> f64 {
        self.iter_draws().map(|d| d[param]).sum::<f64>() / self.total_draws() as f64
    }

    pub fn parameter_sd(&self, param: usize) -> f64 {
        let mu = self.parameter_mean(param);
        let n = self.total_draws() as f64;
        (self.iter_draws().map(|d| (d[param] - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    pub fn divergence_count(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    /// The model state of one draw, when samples come from the event model.
    pub fn state(&self, chain: usize, index: usize) -> Result<ParameterState> {
        let layout = self
            .layout
            .ok_or_else(|| Error::invalid("samples do not come from the event model"))?;
        ParameterState::from_constrained_vec(self.draw(chain, index), layout)
    }
}

/// The unconstrained draws of a run before any back-transformation.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<DrawStats>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initial_point<T: LogDensity>(target: &T, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if let Ok(lp) = target.log_density_and_grad(&q, &mut grad) {
            if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok(q);
            }
        }
    }
    Err(Error::InitializationFailure {
        attempts: INIT_ATTEMPTS,
    })
}

/// Run one chain: warmup with adaptation, then `config.samples` draws.
pub fn run_chain<T: LogDensity>(target: &T, config: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = chain_rng(config.seed, chain);
    let q0 = initial_point(target, &mut rng)?;
    let mut sampler = nuts::Nuts::new(target, config, q0)?;
    sampler.warmup(config.warmup, &mut rng);
    let mut draws = Vec::with_capacity(config.samples);
    let mut stats = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let st = sampler.transition(&mut rng);
        draws.push(sampler.position().to_vec());
        stats.push(st);
    }
    Ok(ChainOutput {
        draws,
        stats,
        step_size: sampler.step_size(),
        inv_mass: sampler.inv_mass().to_vec(),
    })
}

/// Run all chains in parallel.
pub fn run_chains<T: LogDensity>(target: &T, config: &SamplerConfig) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect()
}

/// Sample an arbitrary target; draws stay on the unconstrained scale and are
/// named `x_1..x_d`.
pub fn sample_target<T: LogDensity>(target: &T, config: &SamplerConfig) -> Result<PosteriorSamples> {
    let outputs = run_chains(target, config)?;
    let names = (1..=target.dim()).map(|i| format!("x_{i}")).collect();
    let values = outputs.iter().flat_map(|o| o.draws.iter().flatten().copied()).collect();
    let stats = outputs.iter().flat_map(|o| o.stats.iter().copied()).collect();
    PosteriorSamples::from_parts(names, config.chains, config.samples, values, stats, None)
}

/// Sample the multilevel event model and store draws on the constrained scale.
pub fn run_sampler(
    data: &EventDataset,
    priors: &ModelPriors,
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    let target = MultilevelPosterior::new(data, *priors);
    let layout = data.layout();
    let outputs = run_chains(&target, config)?;
    let mut values = Vec::with_capacity(config.chains * config.samples * layout.dim());
    for out in &outputs {
        for draw in &out.draws {
            values.extend(ParameterState::from_unconstrained(draw, layout)?.to_constrained_vec());
        }
    }
    let stats = outputs.iter().flat_map(|o| o.stats.iter().copied()).collect();
    PosteriorSamples::from_parts(
        layout.names(),
        config.chains,
        config.samples,
        values,
        stats,
        Some(layout),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian {
        scales: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.scales.len()
        }

        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            let mut lp = 0.0;
            for ((g, xi), s) in grad.iter_mut().zip(x).zip(&self.scales) {
                lp -= 0.5 * (xi / s).powi(2);
                *g = -xi / (s * s);
            }
            Ok(lp)
        }
    }

    struct Nowhere;

    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            2
        }

        fn log_density_and_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
            Ok(f64::NEG_INFINITY)
        }
    }

    fn quick() -> SamplerConfig {
        SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 500,
            seed: 17,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { chains: 0, ..SamplerConfig::default() }.validate().is_err());
        assert!(SamplerConfig { target_acceptance: 1.0, ..SamplerConfig::default() }.validate().is_err());
    }

    #[test]
    fn anisotropic_gaussian_moments() {
        let target = Gaussian { scales: vec![0.1, 1.0, 10.0] };
        let s = sample_target(&target, &quick()).unwrap();
        for (j, scale) in [0.1, 1.0, 10.0].iter().enumerate() {
            let mean = s.parameter_mean(j);
            let sd = s.parameter_sd(j);
            assert!(mean.abs() < 0.25 * scale, "mean {mean} for scale {scale}");
            assert!((sd / scale - 1.0).abs() < 0.2, "sd {sd} for scale {scale}");
        }
        assert_eq!(s.divergence_count(), 0);
    }

    #[test]
    fn seeds_reproduce_draws() {
        let target = Gaussian { scales: vec![1.0, 2.0] };
        let cfg = SamplerConfig { warmup: 50, samples: 50, ..quick() };
        let a = sample_target(&target, &cfg).unwrap();
        let b = sample_target(&target, &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample_target(&target, &SamplerConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infinite_target_fails_to_initialize() {
        let err = sample_target(&Nowhere, &quick()).unwrap_err();
        assert!(matches!(err, Error::InitializationFailure { attempts: 100 }));
    }
}
