use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Group, GroupedPredictions};
use crate::error::{Error, Result};
use crate::seed;

/// With-replacement resample drawn separately from the positives and the
/// negatives of each cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSample {
    pub seed: u64,
    /// Per cohort, indices into that cohort's arrays.
    pub indices: Vec<Vec<usize>>,
    /// Cohorts that had no positives (or no negatives) to draw from.
    pub flagged: Vec<usize>,
}

impl BootstrapSample {
    pub fn apply(&self, grouped: &GroupedPredictions) -> Result<GroupedPredictions> {
        if grouped.k() != self.indices.len() {
            return Err(Error::shape(self.indices.len(), grouped.k()));
        }
        let groups = grouped
            .groups
            .iter()
            .zip(&self.indices)
            .map(|(g, idx)| {
                if idx.iter().any(|&i| i >= g.scores.len()) {
                    return Err(Error::invalid("bootstrap index outside its cohort"));
                }
                Ok(Group {
                    scores: idx.iter().map(|&i| g.scores[i]).collect(),
                    labels: idx.iter().map(|&i| g.labels[i]).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupedPredictions { groups })
    }
}

pub fn bootstrap_resample(grouped: &GroupedPredictions, seed: u64) -> Result<BootstrapSample> {
    if grouped.groups.is_empty() {
        return Err(Error::invalid("no cohorts to resample"));
    }
    let mut indices = Vec::with_capacity(grouped.k());
    let mut flagged = Vec::new();
    for (k, g) in grouped.groups.iter().enumerate() {
        let mut rng = seed::derived_rng(seed, k as u64);
        let pos: Vec<usize> = (0..g.labels.len()).filter(|&i| g.labels[i]).collect();
        let neg: Vec<usize> = (0..g.labels.len()).filter(|&i| !g.labels[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            log::warn!("bootstrap: cohort {k} has a single class; resampling that class only");
            flagged.push(k);
        }
        let mut idx = Vec::with_capacity(g.labels.len());
        for stratum in [&pos, &neg] {
            for _ in 0..stratum.len() {
                idx.push(stratum[rng.random_range(0..stratum.len())]);
            }
        }
        indices.push(idx);
    }
    Ok(BootstrapSample { seed, indices, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and 95% percentile interval.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        lo: quantile(&v, 0.025),
        hi: quantile(&v, 0.975),
        n: values.len(),
    })
}
