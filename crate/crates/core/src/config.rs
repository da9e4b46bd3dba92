//! Run configuration.
//!
//! A TOML file, normally written with flat dotted keys:
//!
//! ```toml
//! seed = 7
//! basis.L = 3.0
//! basis.M = 40
//! priors.sigma = "halfnormal(0.2)"
//! sampler.chains = 4
//! ingest.normalization = "pooled"
//! monitor.score_floor = 0.8
//! ```
//!
//! Every key is optional and unknown keys are rejected. All randomness in a run
//! derives from `seed`; each stage gets its own child seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::hsgp::{HsgpBasis, DEFAULT_BASIS_SIZE, DEFAULT_HALF_WIDTH};
use crate::inference::SamplerConfig;
use crate::ingest::{Normalization, DEFAULT_BASELINE_WINDOW, DEFAULT_FILTER_WINDOW, DEFAULT_GAUGE_FACTOR};
use crate::model::ModelPriors;
use crate::monitor::MonitorConfig;
use crate::stats::derive_seed;
use crate::{Error, Result};

/// Environment variable naming a config file used when no `--config` is given.
pub const CONFIG_ENV: &str = "STRAINFIELD_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Fit,
}

impl Stage {
    fn stream(self) -> u64 {
        match self {
            Stage::Simulate => 1,
            Stage::Fit => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub size: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            half_width: DEFAULT_HALF_WIDTH,
            size: DEFAULT_BASIS_SIZE,
        }
    }
}

impl BasisConfig {
    pub fn build(&self) -> Result<HsgpBasis> {
        HsgpBasis::new(self.half_width, self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub gauge_factor: f64,
    pub baseline_window: usize,
    /// Moving-average window in samples; 1 disables filtering.
    pub filter_window: usize,
    pub normalization: Normalization,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            gauge_factor: DEFAULT_GAUGE_FACTOR,
            baseline_window: DEFAULT_BASELINE_WINDOW,
            filter_window: DEFAULT_FILTER_WINDOW,
            normalization: Normalization::Pooled,
        }
    }
}

/// Sampler settings; the sampler seed comes from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_acceptance: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSettings {
            chains: d.chains,
            warmup: d.warmup,
            samples: d.samples,
            target_acceptance: d.target_acceptance,
            max_tree_depth: d.max_tree_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Crossings per fleet in the `pipeline` command when it simulates its own
    /// input.
    pub events_per_class: usize,
    /// Noise sd, με.
    pub noise_sd: f64,
    pub sample_rate_hz: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            events_per_class: 10,
            noise_sd: 1.0,
            sample_rate_hz: crate::simulate::DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub basis: BasisConfig,
    pub priors: ModelPriors,
    pub sampler: SamplerSettings,
    pub ingest: IngestConfig,
    pub monitor: MonitorConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            basis: BasisConfig::default(),
            priors: ModelPriors::default(),
            sampler: SamplerSettings::default(),
            ingest: IngestConfig::default(),
            monitor: MonitorConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    /// The file named by `explicit`, else by `STRAINFIELD_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => RunConfig::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => RunConfig::load(Path::new(&p)),
                _ => Ok(RunConfig::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.build()?;
        self.sampler_config(Stage::Fit).validate()?;
        self.monitor.grid()?;
        if !(self.ingest.gauge_factor > 0.0) {
            return Err(Error::Config("ingest.gauge_factor must be positive".into()));
        }
        if self.ingest.baseline_window == 0 {
            return Err(Error::Config("ingest.baseline_window must be at least 1".into()));
        }
        if self.ingest.filter_window % 2 == 0 {
            return Err(Error::Config("ingest.filter_window must be odd".into()));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.stream())
    }

    pub fn sampler_config(&self, stage: Stage) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            chains: s.chains,
            warmup: s.warmup,
            samples: s.samples,
            seed: self.stage_seed(stage),
            target_acceptance: s.target_acceptance,
            max_tree_depth: s.max_tree_depth,
        }
    }

    /// SHA-256 of the canonical serialization; equal configs hash equally
    /// however they were written.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
