//! Joint log density of the multilevel event model.
//!
//! Every event `k` has its own latent function `f_k = Φ_k (w ⊙ β_k)` and noise
//! scale `σ_k`, while the kernel hyperparameters `(α, ℓ)` are shared by all
//! events. The weights `β_k` are standard normal (non-centered form), and the
//! spectral weights `w` carry the kernel.
//!
//! The sampler works on the unconstrained vector
//! `[log α, log ℓ, log σ_1..log σ_K, β_{1,1}..β_{K,M}]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hsgp::{
    build_design_matrix, log_weight_ell_sensitivity, spectral_weights, DesignMatrix, HsgpBasis,
    KernelHyper,
};
use crate::inference::LogDensity;
use crate::ingest::{InputAxis, StrainEvent};
use crate::stats::{dot, standard_normal_cdf, LN_SQRT_2PI};
use crate::{Error, Result};

/// Prior on a positive scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Prior {
    /// Normal(mean, sd) truncated to `x > 0`, normalized by the retained mass.
    TruncatedNormal { mean: f64, sd: f64 },
    /// Zero-centred half-normal with the given scale.
    HalfNormal { scale: f64 },
}

impl Prior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::TruncatedNormal { mean, sd } => {
                let z = (x - mean) / sd;
                let mass = 1.0 - standard_normal_cdf(-mean / sd);
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI - mass.ln()
            }
            Prior::HalfNormal { scale } => {
                let z = x / scale;
                std::f64::consts::LN_2 - scale.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
        }
    }

    /// Derivative of the log density with respect to `x`.
    pub fn d_log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::TruncatedNormal { mean, sd } => -(x - mean) / (sd * sd),
            Prior::HalfNormal { scale } => -x / (scale * scale),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::TruncatedNormal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Prior::HalfNormal { scale } => scale.is_finite() && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid prior {self}")))
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::TruncatedNormal { mean, sd } => write!(f, "truncnormal({mean},{sd})"),
            Prior::HalfNormal { scale } => write!(f, "halfnormal({scale})"),
        }
    }
}

impl FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot parse prior `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let prior = match (name.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("truncnormal", [mean, sd]) => Prior::TruncatedNormal { mean: *mean, sd: *sd },
            ("halfnormal", [scale]) => Prior::HalfNormal { scale: *scale },
            _ => return Err(bad()),
        };
        prior.validate()?;
        Ok(prior)
    }
}

impl TryFrom<String> for Prior {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Prior> for String {
    fn from(p: Prior) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPriors {
    pub alpha: Prior,
    pub ell: Prior,
    pub sigma: Prior,
}

impl Default for ModelPriors {
    fn default() -> Self {
        ModelPriors {
            alpha: Prior::TruncatedNormal { mean: 1.0, sd: 1.0 },
            ell: Prior::HalfNormal { scale: 1.0 },
            sigma: Prior::HalfNormal { scale: 0.2 },
        }
    }
}

/// Shape of the parameter vector: `K` events with `M` basis weights each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub events: usize,
    pub basis_size: usize,
}

impl ParameterLayout {
    pub const ALPHA: usize = 0;
    pub const ELL: usize = 1;

    pub fn dim(&self) -> usize {
        2 + self.events + self.events * self.basis_size
    }

    pub fn sigma(&self, k: usize) -> usize {
        2 + k
    }

    pub fn beta(&self, k: usize, m: usize) -> usize {
        2 + self.events + k * self.basis_size + m
    }

    /// Number of leading coordinates that are log-transformed positives.
    pub fn positive_count(&self) -> usize {
        2 + self.events
    }

    /// Column names with 1-based event and basis indices.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["alpha".to_string(), "ell".to_string()];
        names.extend((1..=self.events).map(|k| format!("sigma_{k}")));
        for k in 1..=self.events {
            names.extend((1..=self.basis_size).map(|m| format!("beta_{k}_{m}")));
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub alpha: f64,
    pub ell: f64,
    pub sigma: Vec<f64>,
    /// Row-major `K × M`.
    pub beta: Vec<f64>,
    pub basis_size: usize,
}

impl ParameterState {
    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            events: self.sigma.len(),
            basis_size: self.basis_size,
        }
    }

    pub fn hyper(&self) -> Result<KernelHyper> {
        KernelHyper::new(self.alpha, self.ell)
    }

    pub fn beta_row(&self, k: usize) -> &[f64] {
        &self.beta[k * self.basis_size..(k + 1) * self.basis_size]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::invalid(format!("ell must be positive, got {}", self.ell)));
        }
        if let Some((k, s)) = self
            .sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::invalid(format!("sigma_{} must be positive, got {s}", k + 1)));
        }
        if self.beta.len() != self.sigma.len() * self.basis_size {
            return Err(Error::invalid(format!(
                "beta has {} entries, expected {}",
                self.beta.len(),
                self.sigma.len() * self.basis_size
            )));
        }
        Ok(())
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().dim());
        v.push(self.alpha.ln());
        v.push(self.ell.ln());
        v.extend(self.sigma.iter().map(|s| s.ln()));
        v.extend_from_slice(&self.beta);
        v
    }

    /// Constrained values in layout order (the inverse image of
    /// [`ParameterState::to_unconstrained`]).
    pub fn to_constrained_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().dim());
        v.push(self.alpha);
        v.push(self.ell);
        v.extend_from_slice(&self.sigma);
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn from_constrained_vec(v: &[f64], layout: ParameterLayout) -> Result<Self> {
        check_dim(v, layout)?;
        let state = ParameterState {
            alpha: v[0],
            ell: v[1],
            sigma: v[2..layout.positive_count()].to_vec(),
            beta: v[layout.positive_count()..].to_vec(),
            basis_size: layout.basis_size,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn from_unconstrained(v: &[f64], layout: ParameterLayout) -> Result<Self> {
        check_dim(v, layout)?;
        let p = layout.positive_count();
        let mut positives = Vec::with_capacity(p);
        for (i, &u) in v[..p].iter().enumerate() {
            let e = u.exp();
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::NumericalFailure {
                    coordinate: Some(i),
                    detail: format!("exp({u}) is not a finite positive number"),
                });
            }
            positives.push(e);
        }
        if let Some(i) = v[p..].iter().position(|b| !b.is_finite()) {
            return Err(Error::NumericalFailure {
                coordinate: Some(p + i),
                detail: "non-finite basis weight".into(),
            });
        }
        Ok(ParameterState {
            alpha: positives[0],
            ell: positives[1],
            sigma: positives[2..].to_vec(),
            beta: v[p..].to_vec(),
            basis_size: layout.basis_size,
        })
    }
}

fn check_dim(v: &[f64], layout: ParameterLayout) -> Result<()> {
    if v.len() != layout.dim() {
        return Err(Error::invalid(format!(
            "parameter vector has {} entries, layout needs {}",
            v.len(),
            layout.dim()
        )));
    }
    Ok(())
}

/// Per-event data with the sufficient statistics of the Gaussian likelihood.
#[derive(Debug, Clone)]
pub struct EventBlock {
    pub event_id: String,
    pub y: Vec<f64>,
    pub design: DesignMatrix,
    gram: Vec<f64>,
    phi_t_y: Vec<f64>,
    yty: f64,
}

impl EventBlock {
    fn new(event_id: String, x: &[f64], y: Vec<f64>, basis: &HsgpBasis) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid("x and y lengths differ"));
        }
        let design = build_design_matrix(x, basis)?;
        let gram = design.gram();
        let phi_t_y = design.transpose_apply(&y);
        let yty = dot(&y, &y);
        Ok(EventBlock {
            event_id,
            y,
            design,
            gram,
            phi_t_y,
            yty,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// All events of one fit, on a shared basis.
#[derive(Debug, Clone)]
pub struct EventDataset {
    basis: HsgpBasis,
    events: Vec<EventBlock>,
}

impl EventDataset {
    /// Build from normalized events.
    pub fn new(events: &[StrainEvent], basis: HsgpBasis) -> Result<Self> {
        let blocks = events
            .iter()
            .map(|ev| {
                if ev.series.axis() != InputAxis::Normalized {
                    return Err(Error::invalid(format!(
                        "event {} must be normalized before fitting",
                        ev.event_id
                    )));
                }
                EventBlock::new(ev.event_id.clone(), ev.series.x(), ev.series.y().to_vec(), &basis)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks, basis)
    }

    /// Build directly from `(x, y)` pairs already on the model scale.
    pub fn from_xy(series: Vec<(Vec<f64>, Vec<f64>)>, basis: HsgpBasis) -> Result<Self> {
        let blocks = series
            .into_iter()
            .enumerate()
            .map(|(k, (x, y))| EventBlock::new(format!("event_{}", k + 1), &x, y, &basis))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks, basis)
    }

    fn from_blocks(events: Vec<EventBlock>, basis: HsgpBasis) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::invalid("dataset needs at least one event"));
        }
        if let Some(ev) = events.iter().find(|e| e.is_empty()) {
            return Err(Error::invalid(format!("event {} has no samples", ev.event_id)));
        }
        Ok(EventDataset { basis, events })
    }

    pub fn basis(&self) -> &HsgpBasis {
        &self.basis
    }

    pub fn events(&self) -> &[EventBlock] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            events: self.events.len(),
            basis_size: self.basis.size(),
        }
    }

    fn check_state(&self, state: &ParameterState) -> Result<()> {
        if state.layout() != self.layout() {
            return Err(Error::invalid(format!(
                "state layout {:?} does not match dataset layout {:?}",
                state.layout(),
                self.layout()
            )));
        }
        Ok(())
    }
}

/// `f_k = Φ (w ⊙ β_k)` on the rows of `design`.
pub fn event_function(
    beta_k: &[f64],
    hyper: &KernelHyper,
    design: &DesignMatrix,
    basis: &HsgpBasis,
) -> Result<Vec<f64>> {
    if beta_k.len() != design.cols() || design.cols() != basis.size() {
        return Err(Error::invalid(format!(
            "beta has {} weights, design has {} columns, basis has {} functions",
            beta_k.len(),
            design.cols(),
            basis.size()
        )));
    }
    let w = spectral_weights(basis, hyper);
    let coeffs: Vec<f64> = w.iter().zip(beta_k).map(|(a, b)| a * b).collect();
    Ok(design.apply(&coeffs))
}

pub fn log_prior(state: &ParameterState, priors: &ModelPriors) -> Result<f64> {
    state.validate()?;
    let mut lp = priors.alpha.log_density(state.alpha) + priors.ell.log_density(state.ell);
    lp += state.sigma.iter().map(|&s| priors.sigma.log_density(s)).sum::<f64>();
    lp += state
        .beta
        .iter()
        .map(|b| -0.5 * b * b - LN_SQRT_2PI)
        .sum::<f64>();
    Ok(lp)
}

/// Gaussian log likelihood evaluated from explicit residuals.
pub fn log_likelihood(state: &ParameterState, data: &EventDataset) -> Result<f64> {
    data.check_state(state)?;
    state.validate()?;
    let hyper = state.hyper()?;
    let mut total = 0.0;
    for (k, ev) in data.events.iter().enumerate() {
        let f = event_function(state.beta_row(k), &hyper, &ev.design, &data.basis)?;
        let sigma = state.sigma[k];
        let rss: f64 = ev.y.iter().zip(&f).map(|(y, f)| (y - f).powi(2)).sum();
        total += -(ev.len() as f64) * (sigma.ln() + LN_SQRT_2PI) - rss / (2.0 * sigma * sigma);
    }
    Ok(total)
}

/// The unconstrained log posterior as a sampler target.
#[derive(Debug, Clone)]
pub struct MultilevelPosterior<'a> {
    data: &'a EventDataset,
    priors: ModelPriors,
}

impl<'a> MultilevelPosterior<'a> {
    pub fn new(data: &'a EventDataset, priors: ModelPriors) -> Self {
        MultilevelPosterior { data, priors }
    }

    pub fn data(&self) -> &EventDataset {
        self.data
    }

    /// Log posterior including the log-Jacobian of the exp transforms, and its
    /// gradient written into `grad`.
    pub fn evaluate(&self, v: &[f64], grad: &mut [f64]) -> Result<f64> {
        let layout = self.data.layout();
        let state = ParameterState::from_unconstrained(v, layout)?;
        if grad.len() != layout.dim() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);

        let basis = &self.data.basis;
        let hyper = KernelHyper {
            alpha: state.alpha,
            ell: state.ell,
        };
        let m = basis.size();
        let w = spectral_weights(basis, &hyper);
        let sens = log_weight_ell_sensitivity(basis, &hyper);

        // d/dw_m of the total log likelihood
        let mut d_w = vec![0.0; m];
        let mut coeffs = vec![0.0; m];
        let mut value = 0.0;

        for (k, ev) in self.data.events.iter().enumerate() {
            let beta = state.beta_row(k);
            for j in 0..m {
                coeffs[j] = w[j] * beta[j];
            }
            // r = Φᵀy - ΦᵀΦ c
            let mut quad = 0.0;
            let mut resid_dir = vec![0.0; m];
            for a in 0..m {
                let g_row = &ev.gram[a * m..(a + 1) * m];
                let gc = dot(g_row, &coeffs);
                quad += coeffs[a] * gc;
                resid_dir[a] = ev.phi_t_y[a] - gc;
            }
            let rss = (ev.yty - 2.0 * dot(&coeffs, &ev.phi_t_y) + quad).max(0.0);
            let sigma = state.sigma[k];
            let inv_var = 1.0 / (sigma * sigma);
            let n = ev.len() as f64;
            value += -n * (sigma.ln() + LN_SQRT_2PI) - 0.5 * rss * inv_var;

            grad[layout.sigma(k)] += -n + rss * inv_var;
            for j in 0..m {
                let r = resid_dir[j] * inv_var;
                grad[layout.beta(k, j)] += r * w[j];
                d_w[j] += r * beta[j];
            }
        }

        for j in 0..m {
            grad[ParameterLayout::ALPHA] += d_w[j] * w[j];
            grad[ParameterLayout::ELL] += d_w[j] * w[j] * sens[j];
        }

        // priors, with the chain rule through x = exp(u) and the Jacobian term u
        let pr = &self.priors;
        value += pr.alpha.log_density(state.alpha) + v[ParameterLayout::ALPHA];
        grad[ParameterLayout::ALPHA] += pr.alpha.d_log_density(state.alpha) * state.alpha + 1.0;
        value += pr.ell.log_density(state.ell) + v[ParameterLayout::ELL];
        grad[ParameterLayout::ELL] += pr.ell.d_log_density(state.ell) * state.ell + 1.0;
        for (k, &s) in state.sigma.iter().enumerate() {
            value += pr.sigma.log_density(s) + v[layout.sigma(k)];
            grad[layout.sigma(k)] += pr.sigma.d_log_density(s) * s + 1.0;
        }
        let p = layout.positive_count();
        for (i, b) in state.beta.iter().enumerate() {
            value += -0.5 * b * b - LN_SQRT_2PI;
            grad[p + i] -= b;
        }

        if !value.is_finite() {
            let coordinate = grad.iter().position(|g| !g.is_finite());
            return Err(Error::NumericalFailure {
                coordinate,
                detail: format!("log posterior evaluated to {value}"),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure {
                coordinate: Some(i),
                detail: "non-finite gradient".into(),
            });
        }
        Ok(value)
    }
}

impl LogDensity for MultilevelPosterior<'_> {
    fn dim(&self) -> usize {
        self.data.layout().dim()
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.evaluate(position, grad)
    }
}

/// Value and gradient of the unconstrained log posterior.
pub fn log_posterior_unconstrained(
    v: &[f64],
    data: &EventDataset,
    priors: &ModelPriors,
) -> Result<(f64, Vec<f64>)> {
    let target = MultilevelPosterior::new(data, *priors);
    let mut grad = vec![0.0; data.layout().dim()];
    let value = target.evaluate(v, &mut grad)?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_dataset() -> EventDataset {
        let basis = HsgpBasis::new(3.0, 3).unwrap();
        EventDataset::from_xy(vec![(vec![0.4], vec![0.3])], basis).unwrap()
    }

    fn random_dataset(k: usize, n: usize, m: usize, rng: &mut impl Rng) -> EventDataset {
        let basis = HsgpBasis::new(3.0, m).unwrap();
        let series = (0..k)
            .map(|_| {
                let x: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
                let y = x.iter().map(|t| (1.3 * t).sin() + rng.random_range(-0.1..0.1)).collect();
                (x, y)
            })
            .collect();
        EventDataset::from_xy(series, basis).unwrap()
    }

    #[test]
    fn prior_densities() {
        let hn = Prior::HalfNormal { scale: 1.0 };
        assert!((hn.log_density(1.0) - (-0.725_791_3)).abs() < 1e-7);
        let tn = Prior::TruncatedNormal { mean: 1.0, sd: 1.0 };
        // -ln sqrt(2 pi) - ln Phi(1)
        assert!((tn.log_density(1.0) - (-0.746_184_754)).abs() < 1e-8);
        assert!((tn.log_density(1.0) - (-0.746_242_6)).abs() < 1e-4);
        assert!((standard_normal_cdf(1.0) - 0.841_344_7).abs() < 1e-7);
    }

    #[test]
    fn prior_parsing() {
        let p: Prior = "truncnormal(1,1)".parse().unwrap();
        assert_eq!(p, Prior::TruncatedNormal { mean: 1.0, sd: 1.0 });
        let p: Prior = " halfnormal( 0.2 ) ".parse().unwrap();
        assert_eq!(p, Prior::HalfNormal { scale: 0.2 });
        assert_eq!(p.to_string().parse::<Prior>().unwrap(), p);
        assert!("halfnormal(-1)".parse::<Prior>().is_err());
        assert!("gamma(1,1)".parse::<Prior>().is_err());
        assert!("halfnormal(1,2)".parse::<Prior>().is_err());
    }

    #[test]
    fn prior_signal_to_noise_is_five() {
        let p = ModelPriors::default();
        let (Prior::TruncatedNormal { mean, .. }, Prior::HalfNormal { scale }) = (p.alpha, p.sigma) else {
            panic!("unexpected default priors");
        };
        assert!((mean / scale - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_prior_mass() {
        let state = ParameterState {
            alpha: 1.0,
            ell: 1.0,
            sigma: vec![0.2, 0.2],
            beta: vec![0.0; 2 * 4],
            basis_size: 4,
        };
        let priors = ModelPriors::default();
        let lp = log_prior(&state, &priors).unwrap();
        let hyp = priors.alpha.log_density(1.0) + priors.ell.log_density(1.0) + 2.0 * priors.sigma.log_density(0.2);
        assert!((lp - hyp - (-(8.0 / 2.0) * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        let mut bad = state.clone();
        bad.sigma[1] = 0.0;
        assert!(log_prior(&bad, &priors).is_err());
    }

    #[test]
    fn likelihood_examples() {
        // y equals f exactly at a single point with sigma 1
        let basis = HsgpBasis::new(3.0, 2).unwrap();
        let hyper = KernelHyper::new(1.0, 1.0).unwrap();
        let design = build_design_matrix(&[0.5], &basis).unwrap();
        let beta = vec![0.3, -0.2];
        let f = event_function(&beta, &hyper, &design, &basis).unwrap()[0];
        let data = EventDataset::from_xy(vec![(vec![0.5], vec![f])], basis.clone()).unwrap();
        let state = ParameterState { alpha: 1.0, ell: 1.0, sigma: vec![1.0], beta: beta.clone(), basis_size: 2 };
        assert!((log_likelihood(&state, &data).unwrap() - (-0.918_938_5)).abs() < 1e-7);

        let data = EventDataset::from_xy(vec![(vec![0.5], vec![f + 0.2])], basis).unwrap();
        let state = ParameterState { sigma: vec![0.2], ..state };
        // -ln 0.2 - ln sqrt(2 pi) - 1/2
        let ll = log_likelihood(&state, &data).unwrap();
        assert!((ll - 0.190_499_379).abs() < 1e-8);
        assert!((ll - 0.190_482_1).abs() < 1e-4);
    }

    #[test]
    fn likelihood_ignores_event_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_dataset(3, 20, 6, &mut rng);
        let layout = data.layout();
        let v: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = ParameterState::from_unconstrained(&v, layout).unwrap();

        let order = [2usize, 0, 1];
        let permuted = EventDataset::from_xy(
            order
                .iter()
                .map(|&k| (data.events[k].design.inputs().to_vec(), data.events[k].y.clone()))
                .collect(),
            data.basis.clone(),
        )
        .unwrap();
        let mut pstate = state.clone();
        pstate.sigma = order.iter().map(|&k| state.sigma[k]).collect();
        pstate.beta = order.iter().flat_map(|&k| state.beta_row(k).to_vec()).collect();
        let a = log_likelihood(&state, &data).unwrap();
        let b = log_likelihood(&pstate, &permuted).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn event_function_linear_and_zero() {
        let basis = HsgpBasis::new(3.0, 5).unwrap();
        let hyper = KernelHyper::new(0.9, 0.8).unwrap();
        let design = build_design_matrix(&[-3.0, -1.0, 0.0, 2.0, 3.0], &basis).unwrap();
        let zero = event_function(&[0.0; 5], &hyper, &design, &basis).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let b1 = [0.5, -1.0, 0.2, 0.3, 1.1];
        let b2 = [-0.1, 0.4, 0.9, -0.7, 0.05];
        let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
        let f1 = event_function(&b1, &hyper, &design, &basis).unwrap();
        let f2 = event_function(&b2, &hyper, &design, &basis).unwrap();
        let f12 = event_function(&sum, &hyper, &design, &basis).unwrap();
        for i in 0..5 {
            assert!((f1[i] + f2[i] - f12[i]).abs() < 1e-10);
        }
        assert_eq!(f1[0], 0.0);
        assert_eq!(f1[4], 0.0);
        assert!(event_function(&[0.0; 4], &hyper, &design, &basis).is_err());
    }

    #[test]
    fn unconstrained_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layout = ParameterLayout { events: 3, basis_size: 4 };
        for _ in 0..20 {
            let v: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let state = ParameterState::from_unconstrained(&v, layout).unwrap();
            let back = state.to_unconstrained();
            for (a, b) in v.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
            let c = ParameterState::from_constrained_vec(&state.to_constrained_vec(), layout).unwrap();
            assert_eq!(c, state);
        }
        assert_eq!(layout.names()[layout.beta(2, 3)], "beta_3_4");
        assert_eq!(layout.names()[layout.sigma(0)], "sigma_1");
    }

    #[test]
    fn suff_stats_route_matches_residual_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_dataset(2, 30, 8, &mut rng);
        let priors = ModelPriors::default();
        for _ in 0..10 {
            let v: Vec<f64> = (0..data.layout().dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let state = ParameterState::from_unconstrained(&v, data.layout()).unwrap();
            let composed = log_prior(&state, &priors).unwrap()
                + log_likelihood(&state, &data).unwrap()
                + v[..data.layout().positive_count()].iter().sum::<f64>();
            let (value, _) = log_posterior_unconstrained(&v, &data, &priors).unwrap();
            assert!((value - composed).abs() < 1e-9 * composed.abs().max(1.0));
        }
    }

    #[test]
    fn tiny_instance_composition() {
        let data = tiny_dataset();
        let priors = ModelPriors::default();
        let v = vec![0.1, -0.2, -1.5, 0.3, -0.4, 0.8];
        let state = ParameterState::from_unconstrained(&v, data.layout()).unwrap();
        let composed = log_prior(&state, &priors).unwrap() + log_likelihood(&state, &data).unwrap() + v[0] + v[1] + v[2];
        let (value, _) = log_posterior_unconstrained(&v, &data, &priors).unwrap();
        assert!((value - composed).abs() < 1e-10);
    }

    #[test]
    fn ascent_along_beta_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_dataset(2, 25, 6, &mut rng);
        let priors = ModelPriors::default();
        let layout = data.layout();
        let v: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (f0, g) = log_posterior_unconstrained(&v, &data, &priors).unwrap();
        let mut moved = v.clone();
        for i in layout.positive_count()..layout.dim() {
            moved[i] += 1e-6 * g[i];
        }
        let (f1, _) = log_posterior_unconstrained(&moved, &data, &priors).unwrap();
        assert!(f1 > f0);
    }

    #[test]
    fn hyperparameters_pool_every_event() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random_dataset(3, 20, 6, &mut rng);
        let priors = ModelPriors::default();
        let layout = data.layout();
        let v: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g_all) = log_posterior_unconstrained(&v, &data, &priors).unwrap();

        // zero out the last event's response: the shared gradient must move
        let mut series: Vec<(Vec<f64>, Vec<f64>)> = data
            .events
            .iter()
            .map(|e| (e.design.inputs().to_vec(), e.y.clone()))
            .collect();
        series[2].1.iter_mut().for_each(|y| *y = 0.0);
        let altered = EventDataset::from_xy(series, data.basis.clone()).unwrap();
        let (_, g_alt) = log_posterior_unconstrained(&v, &altered, &priors).unwrap();
        assert!((g_all[0] - g_alt[0]).abs() > 1e-8);
        assert!((g_all[1] - g_alt[1]).abs() > 1e-8);
    }

    #[test]
    fn overflow_reports_coordinate() {
        let data = tiny_dataset();
        let priors = ModelPriors::default();
        let v = vec![0.0, 900.0, 0.0, 0.0, 0.0, 0.0];
        match log_posterior_unconstrained(&v, &data, &priors) {
            Err(Error::NumericalFailure { coordinate, .. }) => assert_eq!(coordinate, Some(1)),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unnormalized_events() {
        use crate::classify::BwimFeatures;
        use crate::ingest::StrainSeries;
        let s = StrainSeries::new(vec![0.0, 1.0], vec![0.0, 1.0], InputAxis::Distance).unwrap();
        let ev = StrainEvent::new("e", s, 10.0, BwimFeatures::new(1, vec![1.0], vec![]).unwrap()).unwrap();
        assert!(EventDataset::new(&[ev], HsgpBasis::default()).is_err());
    }
}
