//! Correlation structure of posterior mean functions and outlier flags.
//!
//! Events of one train type produce near-identical envelopes, so the Pearson
//! correlation between their posterior means is close to one. An event whose
//! mean correlation with its own group falls well below the group's typical
//! value is flagged.

use serde::{Deserialize, Serialize};

use crate::classify::TrainClass;
use crate::inference::{posterior_predictive, PosteriorSamples};
use crate::model::EventDataset;
use crate::stats::{mean, median};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    /// Flag when the score falls this many MADs below the group median.
    pub mad_multiplier: f64,
    /// Flag any score below this floor.
    pub score_floor: f64,
    /// Groups smaller than this are never flagged.
    pub min_group_size: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            grid_min: -2.5,
            grid_max: 2.5,
            grid_points: 201,
            mad_multiplier: 3.0,
            score_floor: 0.8,
            min_group_size: 3,
        }
    }
}

impl MonitorConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.grid_points < 2 || !(self.grid_max > self.grid_min) {
            return Err(Error::invalid("monitor grid needs two or more increasing points"));
        }
        let step = (self.grid_max - self.grid_min) / (self.grid_points - 1) as f64;
        Ok((0..self.grid_points)
            .map(|i| self.grid_min + step * i as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    /// Mean correlation with the other members of the same group; absent for
    /// events without any same-label peer.
    pub score: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub event_ids: Vec<String>,
    pub labels: Vec<TrainClass>,
    pub grid: Vec<f64>,
    /// Row-major `K × K`.
    pub matrix: Vec<Vec<f64>>,
    pub flags: Vec<OutlierFlag>,
    pub rule: String,
}

/// Row `k` is the noise-free posterior mean of `f_k` on `grid`.
pub fn posterior_mean_matrix(
    samples: &PosteriorSamples,
    data: &EventDataset,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if grid.len() < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    data.basis().check_inputs(grid)?;
    (0..data.len())
        .map(|k| posterior_predictive(samples, data, k, grid).map(|p| p.mean))
        .collect()
}

/// Pearson correlation between every pair of rows.
pub fn pearson_correlation_matrix(means: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let g = means.first().map_or(0, Vec::len);
    if means.iter().any(|r| r.len() != g) {
        return Err(Error::invalid("rows have different lengths"));
    }
    let centred: Vec<(Vec<f64>, f64)> = means
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mu = mean(row);
            let c: Vec<f64> = row.iter().map(|v| v - mu).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::DegenerateInput(format!(
                    "event {} has zero variance over the grid",
                    k + 1
                )));
            }
            Ok((c, norm))
        })
        .collect::<Result<_>>()?;
    let k = means.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        out[i][i] = 1.0;
        for j in i + 1..k {
            let (a, na) = &centred[i];
            let (b, nb) = &centred[j];
            let r = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            let r = r.clamp(-1.0, 1.0);
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// Score each event by its mean correlation with same-label peers and flag
/// scores below `median - mad_multiplier · MAD` of its group, or below
/// `score_floor`. MAD is the raw median absolute deviation.
pub fn flag_outliers(matrix: &[Vec<f64>], labels: &[TrainClass], config: &MonitorConfig) -> Vec<OutlierFlag> {
    let k = labels.len();
    let scores: Vec<Option<f64>> = (0..k)
        .map(|i| {
            let peers: Vec<f64> = (0..k)
                .filter(|&j| j != i && labels[j] == labels[i])
                .map(|j| matrix[i][j])
                .collect();
            (!peers.is_empty()).then(|| mean(&peers))
        })
        .collect();

    let mut flags: Vec<OutlierFlag> = scores
        .iter()
        .map(|&score| OutlierFlag { score, flagged: false })
        .collect();

    let mut groups: Vec<TrainClass> = labels.to_vec();
    groups.sort();
    groups.dedup();
    for label in groups {
        let members: Vec<usize> = (0..k).filter(|&i| labels[i] == label).collect();
        if members.len() < config.min_group_size.max(2) {
            continue;
        }
        let group_scores: Vec<f64> = members.iter().filter_map(|&i| scores[i]).collect();
        let med = median(&group_scores);
        let deviations: Vec<f64> = group_scores.iter().map(|s| (s - med).abs()).collect();
        let mad = median(&deviations);
        let cutoff = med - config.mad_multiplier * mad;
        for &i in &members {
            if let Some(s) = scores[i] {
                flags[i].flagged = s < cutoff || s < config.score_floor;
            }
        }
    }
    flags
}

/// Everything the monitoring stage reports for one fit.
pub fn correlation_report(
    samples: &PosteriorSamples,
    data: &EventDataset,
    labels: &[TrainClass],
    config: &MonitorConfig,
) -> Result<CorrelationReport> {
    if labels.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} events",
            labels.len(),
            data.len()
        )));
    }
    let grid = config.grid()?;
    let means = posterior_mean_matrix(samples, data, &grid)?;
    let matrix = pearson_correlation_matrix(&means)?;
    let flags = flag_outliers(&matrix, labels, config);
    Ok(CorrelationReport {
        event_ids: data.events().iter().map(|e| e.event_id.clone()).collect(),
        labels: labels.to_vec(),
        grid,
        matrix,
        flags,
        rule: format!(
            "heuristic: score < median - {} * MAD or score < {} (groups of {}+)",
            config.mad_multiplier, config.score_floor, config.min_group_size
        ),
    })
}

/// Mean correlation within each label and across labels, keyed by label pair.
pub fn block_means(matrix: &[Vec<f64>], labels: &[TrainClass]) -> Vec<((TrainClass, TrainClass), f64)> {
    let mut groups: Vec<TrainClass> = labels.to_vec();
    groups.sort();
    groups.dedup();
    let mut out = Vec::new();
    for &a in &groups {
        for &b in &groups {
            let vals: Vec<f64> = (0..labels.len())
                .flat_map(|i| (0..labels.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && labels[i] == a && labels[j] == b)
                .map(|(i, j)| matrix[i][j])
                .collect();
            if !vals.is_empty() {
                out.push(((a, b), mean(&vals)));
            }
        }
    }
    out
}
