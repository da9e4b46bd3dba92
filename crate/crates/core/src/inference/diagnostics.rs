//! Rank-normalized split-R̂ and bulk effective sample size.

use serde::{Deserialize, Serialize};

use super::PosteriorSamples;
use crate::stats::{median, standard_normal_quantile};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub divergence_count: usize,
}

impl Diagnostics {
    pub fn compute(samples: &PosteriorSamples) -> Result<Self> {
        Ok(Diagnostics {
            names: samples.names().to_vec(),
            rhat: compute_rhat(samples)?,
            ess_bulk: compute_ess_bulk(samples)?,
            divergence_count: samples.divergence_count(),
        })
    }

    pub fn rhat_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.rhat[i])
    }

    pub fn ess_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.ess_bulk[i])
    }
}

fn check_shape(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::invalid("R-hat needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(Error::invalid("R-hat needs at least four draws per chain"));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("chains have different lengths"));
    }
    Ok(n)
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    chains
        .iter()
        .flat_map(|c| {
            let tail = c.len() - half;
            [c[..half].to_vec(), c[tail..].to_vec()]
        })
        .collect()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|v| *v == first)
}

/// Normal scores of the pooled fractional ranks, `(r - 3/8) / (S + 1/4)`.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        // ties share the average of their 1-based ranks
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| standard_normal_quantile((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    let n = chains[0].len();
    z.chunks(n).map(|c| c.to_vec()).collect()
}

fn chain_mean_var(chain: &[f64]) -> (f64, f64) {
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Classic potential scale reduction over the given (already split) chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| chain_mean_var(c)).collect();
    let m = stats.len() as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let between = n / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let within = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if within <= 0.0 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Split-chain, rank-normalized R̂ of one parameter, the larger of the bulk
/// and folded (tail) versions. Constant parameters report exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check_shape(chains)?;
    if is_constant(chains) {
        return Ok(1.0);
    }
    let halves = split(chains);
    let bulk = basic_rhat(&rank_normalize(&halves));
    let all: Vec<f64> = halves.iter().flatten().copied().collect();
    let med = median(&all);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = if is_constant(&folded) {
        1.0
    } else {
        basic_rhat(&rank_normalize(&folded))
    };
    Ok(bulk.max(tail))
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let centred: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            let mu = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|v| v - mu).collect()
        })
        .collect();
    let acov = |lag: usize| -> f64 {
        centred
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let mean_var = acov(0) * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if var_plus <= 0.0 {
        return total;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    // Geyer: sum autocorrelation pairs while they stay positive, and force the
    // pair sums to be non-increasing
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    let mut rho_even = 1.0;
    while lag + 1 < n {
        let rho_odd = rho(lag + 1);
        let mut pair = rho_even + rho_odd;
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += pair;
        prev_pair = pair;
        lag += 2;
        if lag >= n {
            break;
        }
        rho_even = rho(lag);
    }
    let tau = (-1.0 + 2.0 * tau).max(1.0 / total.log10());
    total / tau
}

fn param_chains(samples: &PosteriorSamples) -> Result<Vec<Vec<Vec<f64>>>> {
    if samples.chains() < 2 {
        return Err(Error::invalid("diagnostics need at least two chains"));
    }
    Ok((0..samples.dim()).map(|j| samples.parameter_chains(j)).collect())
}

pub fn compute_rhat(samples: &PosteriorSamples) -> Result<Vec<f64>> {
    param_chains(samples)?.iter().map(|c| split_rhat(c)).collect()
}

/// Bulk ESS: Geyer ESS of the rank-normalized split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> Result<f64> {
    check_shape(chains)?;
    if is_constant(chains) {
        return Ok((chains.len() * chains[0].len()) as f64);
    }
    Ok(ess(&rank_normalize(&split(chains))))
}

pub fn compute_ess_bulk(samples: &PosteriorSamples) -> Result<Vec<f64>> {
    param_chains(samples)?.iter().map(|c| bulk_ess(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn iid_chains_have_unit_rhat() {
        let c = iid(4, 1000, 1);
        let r = split_rhat(&c).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let dup = vec![c[0].clone(), c[0].clone()];
        assert!((split_rhat(&dup).unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn displaced_chains_have_large_rhat() {
        let mut c = iid(2, 500, 2);
        c[1].iter_mut().for_each(|v| *v += 10.0);
        assert!(split_rhat(&c).unwrap() > 1.2);
    }

    #[test]
    fn constant_parameter_convention() {
        let c = vec![vec![2.0; 10], vec![2.0; 10]];
        assert_eq!(split_rhat(&c).unwrap(), 1.0);
        assert_eq!(bulk_ess(&c).unwrap(), 20.0);
    }

    #[test]
    fn shape_errors() {
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0, 4.0]]).is_err());
        assert!(split_rhat(&[vec![1.0, 2.0], vec![1.0, 3.0]]).is_err());
    }

    #[test]
    fn ess_of_iid_is_near_count() {
        let c = iid(4, 1000, 3);
        let e = bulk_ess(&c).unwrap();
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn ess_drops_under_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi: f64 = 0.9;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..1000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + e;
                        x
                    })
                    .collect()
            })
            .collect();
        let e = bulk_ess(&chains).unwrap();
        // AR(1): ess ≈ N (1 - φ) / (1 + φ) ≈ 210
        assert!(e > 120.0 && e < 350.0, "{e}");
    }
}
