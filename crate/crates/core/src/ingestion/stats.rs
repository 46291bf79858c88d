use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::HourlyGrid;
use super::registry::FeatureRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdEstimator {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Zero spread; every observation maps to z = 0.
    pub degenerate: bool,
}

impl FeatureStat {
    pub fn zscore(&self, value: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (value - self.mean) / self.std
        }
    }
}

/// Per-feature mean and standard deviation over observed (episode, hour)
/// cells of the training split. `None` means the feature was never observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub estimator: StdEstimator,
    pub names: Vec<String>,
    pub stats: Vec<Option<FeatureStat>>,
}

impl FeatureStats {
    pub fn get(&self, feature: &str) -> Option<&FeatureStat> {
        self.names
            .iter()
            .position(|n| n == feature)
            .and_then(|i| self.stats[i].as_ref())
    }

    pub fn index_of(&self, feature: &str) -> Option<usize> {
        self.names.iter().position(|n| n == feature)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("stats serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Two-pass mean / spread reduction over the given grids, in grid order.
pub fn compute_feature_stats(
    grids: &[&HourlyGrid],
    registry: &FeatureRegistry,
    estimator: StdEstimator,
) -> FeatureStats {
    let stats = registry
        .names()
        .iter()
        .map(|name| {
            let mut count = 0usize;
            let mut sum = 0.0;
            for g in grids {
                for (_, v) in g.observed(name) {
                    count += 1;
                    sum += v;
                }
            }
            if count == 0 {
                return None;
            }
            let mean = sum / count as f64;
            let mut ss = 0.0;
            for g in grids {
                for (_, v) in g.observed(name) {
                    ss += (v - mean) * (v - mean);
                }
            }
            let denom = match estimator {
                StdEstimator::Population => count as f64,
                StdEstimator::Sample => count.saturating_sub(1) as f64,
            };
            let std = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
            Some(FeatureStat { mean, std, count, degenerate: std == 0.0 || !std.is_finite() })
        })
        .collect();
    FeatureStats { estimator, names: registry.names().to_vec(), stats }
}
