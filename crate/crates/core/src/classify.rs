//! Train-type routing from bridge weigh-in-motion features.
//!
//! A two-question decision tree: sixteen-axle trains are commuter stock, and
//! among those the mean axle separation separates the 350 units from the
//! 220/221 family.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axle count of the commuter fleets handled by the model.
pub const COMMUTER_AXLE_COUNT: usize = 16;

/// Mean axle separation (metres) below which a sixteen-axle train is a 350.
pub const SEPARATION_THRESHOLD_M: f64 = 5.3;

/// Features produced by the weigh-in-motion system for one crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BwimFeatures {
    pub axle_count: usize,
    /// kN per axle.
    pub axle_weights: Vec<f64>,
    /// Metres between consecutive axles.
    pub axle_spacings: Vec<f64>,
}

impl BwimFeatures {
    pub fn new(axle_count: usize, axle_weights: Vec<f64>, axle_spacings: Vec<f64>) -> Result<Self> {
        let features = BwimFeatures {
            axle_count,
            axle_weights,
            axle_spacings,
        };
        features.validate()?;
        Ok(features)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axle_count < 1 {
            return Err(Error::invalid("axle_count must be at least 1"));
        }
        if self.axle_spacings.len() + 1 != self.axle_count {
            return Err(Error::invalid(format!(
                "{} axles need {} spacings, got {}",
                self.axle_count,
                self.axle_count - 1,
                self.axle_spacings.len()
            )));
        }
        if self.axle_spacings.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("axle spacings must be finite and positive"));
        }
        if self.axle_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("axle weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrainClass {
    #[serde(rename = "350")]
    Type350,
    /// 220 and 221 units; they are not told apart.
    #[serde(rename = "22x")]
    Type22x,
    #[serde(rename = "other")]
    Other,
}

impl TrainClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainClass::Type350 => "350",
            TrainClass::Type22x => "22x",
            TrainClass::Other => "other",
        }
    }
}

impl fmt::Display for TrainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "350" | "type350" => Ok(TrainClass::Type350),
            "22x" | "220" | "221" | "type22x" => Ok(TrainClass::Type22x),
            "other" => Ok(TrainClass::Other),
            other => Err(Error::invalid(format!("unknown train class `{other}`"))),
        }
    }
}

pub fn mean_axle_separation(features: &BwimFeatures) -> Result<f64> {
    if features.axle_count < 2 || features.axle_spacings.is_empty() {
        return Err(Error::invalid(
            "mean axle separation needs at least two axles",
        ));
    }
    // running mean: equal spacings give their value back exactly
    let mut mean = 0.0;
    for (i, s) in features.axle_spacings.iter().enumerate() {
        mean += (s - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// Route an event through the decision tree. Ties at the threshold go to 22x.
pub fn classify_event(features: &BwimFeatures) -> TrainClass {
    if features.axle_count != COMMUTER_AXLE_COUNT {
        return TrainClass::Other;
    }
    match mean_axle_separation(features) {
        Ok(sep) if sep < SEPARATION_THRESHOLD_M => TrainClass::Type350,
        Ok(_) => TrainClass::Type22x,
        // sixteen axles always have spacings once validated
        Err(_) => TrainClass::Other,
    }
}
