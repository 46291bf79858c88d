//! z-score bucketization into a sparse binary design tensor.
//!
//! Column layout: for each registry feature in order, one column per integer
//! z bucket (`min_z..=max_z`), followed by static one-hot columns (gender,
//! age quartile, ethnicity) that are replicated at every hour.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::HourlyGrid;
use super::raw::RawEpisode;
use super::stats::FeatureStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub min_z: i32,
    pub max_z: i32,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self { min_z: -4, max_z: 4 }
    }
}

impl BucketSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_z > 0 || self.max_z < 0 {
            return Err(Error::invalid(format!(
                "bucket range [{}, {}] must contain 0",
                self.min_z, self.max_z
            )));
        }
        Ok(())
    }

    pub fn n_buckets(&self) -> usize {
        (self.max_z - self.min_z + 1) as usize
    }

    /// Integer bucket of a z-score: nearest integer (ties away from zero),
    /// clipped to the bucket range.
    pub fn bucket_of(&self, z: f64) -> i32 {
        let r = z.round();
        if r <= self.min_z as f64 {
            self.min_z
        } else if r >= self.max_z as f64 {
            self.max_z
        } else {
            r as i32
        }
    }

    pub fn offset_of(&self, bucket: i32) -> usize {
        (bucket - self.min_z) as usize
    }

    pub fn bucket_at(&self, offset: usize) -> i32 {
        self.min_z + offset as i32
    }
}

/// Sparse binary `hours x columns` tensor: sorted active column indices per hour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryFeatureTensor {
    pub hours: usize,
    pub columns: usize,
    pub active: Vec<Vec<u32>>,
}

impl BinaryFeatureTensor {
    pub fn zeros(hours: usize, columns: usize) -> Self {
        Self { hours, columns, active: vec![Vec::new(); hours] }
    }

    pub fn get(&self, hour: usize, column: usize) -> bool {
        self.active[hour].binary_search(&(column as u32)).is_ok()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.active
            .iter()
            .map(|cols| {
                let mut row = vec![0.0; self.columns];
                for &c in cols {
                    row[c as usize] = 1.0;
                }
                row
            })
            .collect()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let columns = rows.first().map_or(0, Vec::len);
        let mut active = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != columns {
                return Err(Error::shape(columns, row.len()));
            }
            let mut cols = Vec::new();
            for (c, &x) in row.iter().enumerate() {
                if x == 1.0 {
                    cols.push(c as u32);
                } else if x != 0.0 {
                    return Err(Error::invalid(format!("non-binary cell value {x}")));
                }
            }
            active.push(cols);
        }
        Ok(Self { hours: rows.len(), columns, active })
    }

    /// Appends static columns `offset + c` to every hour.
    pub fn append_static(&mut self, static_active: &[u32], offset: usize, total_columns: usize) {
        self.columns = total_columns;
        for hour in &mut self.active {
            hour.extend(static_active.iter().map(|&c| c + offset as u32));
            hour.sort_unstable();
        }
    }

    pub fn nnz(&self) -> usize {
        self.active.iter().map(Vec::len).sum()
    }
}

/// Maps an hourly grid to the feature block of the binary tensor.
/// Every grid feature must be known to `stats`.
pub fn zscore_discretize(
    grid: &HourlyGrid,
    stats: &FeatureStats,
    buckets: &BucketSpec,
) -> Result<BinaryFeatureTensor> {
    let nb = buckets.n_buckets();
    let mut t = BinaryFeatureTensor::zeros(grid.hours, stats.names.len() * nb);
    for (name, values) in &grid.cells {
        let fi = stats
            .index_of(name)
            .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
        let Some(stat) = &stats.stats[fi] else {
            continue;
        };
        for (h, v) in values.iter().enumerate() {
            if let Some(v) = v {
                let b = buckets.bucket_of(stat.zscore(*v));
                t.active[h].push((fi * nb + buckets.offset_of(b)) as u32);
            }
        }
    }
    for hour in &mut t.active {
        hour.sort_unstable();
    }
    Ok(t)
}

/// One-hot encoder for the static variables, fitted on training episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEncoder {
    pub genders: Vec<String>,
    /// Upper bounds (inclusive) of the first three age quartiles.
    pub age_cutpoints: [f64; 3],
    pub ethnicities: Vec<String>,
}

pub const OTHER_ETHNICITY: &str = "OTHER";

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl StaticEncoder {
    pub fn fit(train: &[&RawEpisode], ethnicity_top_k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("no training episodes for static encoder".into()));
        }
        let mut genders: Vec<String> = train.iter().map(|e| e.gender.clone()).collect();
        genders.sort();
        genders.dedup();

        let mut ages: Vec<f64> = train.iter().map(|e| e.age).collect();
        ages.sort_by(f64::total_cmp);
        let age_cutpoints = [
            quantile_sorted(&ages, 0.25),
            quantile_sorted(&ages, 0.5),
            quantile_sorted(&ages, 0.75),
        ];

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in train {
            *counts.entry(e.ethnicity.as_str()).or_default() += 1;
        }
        let mut by_freq: Vec<(&str, usize)> =
            counts.into_iter().filter(|(k, _)| *k != OTHER_ETHNICITY).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let ethnicities = by_freq
            .into_iter()
            .take(ethnicity_top_k)
            .map(|(k, _)| k.to_string())
            .collect();

        Ok(Self { genders, age_cutpoints, ethnicities })
    }

    pub fn n_columns(&self) -> usize {
        self.genders.len() + 4 + self.ethnicities.len() + 1
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.genders.iter().map(|g| format!("gender={g}")).collect();
        names.extend((1..=4).map(|q| format!("age_quartile=Q{q}")));
        names.extend(self.ethnicities.iter().map(|e| format!("ethnicity={e}")));
        names.push(format!("ethnicity={OTHER_ETHNICITY}"));
        names
    }

    pub fn age_quartile(&self, age: f64) -> usize {
        self.age_cutpoints.iter().filter(|&&c| age > c).count()
    }

    /// Active static columns, relative to the start of the static block.
    /// Unseen genders produce no gender column.
    pub fn encode(&self, ep: &RawEpisode) -> Vec<u32> {
        let mut cols = Vec::with_capacity(3);
        if let Some(g) = self.genders.iter().position(|g| *g == ep.gender) {
            cols.push(g as u32);
        }
        let base = self.genders.len();
        cols.push((base + self.age_quartile(ep.age)) as u32);
        let base = base + 4;
        let e = self
            .ethnicities
            .iter()
            .position(|e| *e == ep.ethnicity)
            .unwrap_or(self.ethnicities.len());
        cols.push((base + e) as u32);
        cols
    }
}

/// Column naming for the full tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorLayout {
    pub features: Vec<String>,
    pub buckets: BucketSpec,
    pub static_columns: Vec<String>,
}

impl TensorLayout {
    pub fn feature_columns(&self) -> usize {
        self.features.len() * self.buckets.n_buckets()
    }

    pub fn static_offset(&self) -> usize {
        self.feature_columns()
    }

    pub fn n_columns(&self) -> usize {
        self.feature_columns() + self.static_columns.len()
    }

    pub fn column(&self, feature: usize, bucket: i32) -> usize {
        feature * self.buckets.n_buckets() + self.buckets.offset_of(bucket)
    }

    pub fn feature_range(&self, feature: usize) -> std::ops::Range<usize> {
        let nb = self.buckets.n_buckets();
        feature * nb..(feature + 1) * nb
    }

    pub fn column_name(&self, column: usize) -> String {
        let nb = self.buckets.n_buckets();
        if column < self.feature_columns() {
            let b = self.buckets.bucket_at(column % nb);
            format!("{}:z{:+}", self.features[column / nb], b)
        } else {
            self.static_columns[column - self.feature_columns()].clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::grid::bin_hourly;
    use crate::ingestion::raw::Measurement;
    use crate::ingestion::registry::FeatureRegistry;
    use crate::ingestion::stats::{compute_feature_stats, FeatureStat, StdEstimator};

    fn stats_with(mean: f64, std: f64) -> FeatureStats {
        let reg = FeatureRegistry::standard();
        let mut stats = vec![None; reg.len()];
        stats[reg.index_of("heart_rate").unwrap()] =
            Some(FeatureStat { mean, std, count: 10, degenerate: std == 0.0 });
        FeatureStats { estimator: StdEstimator::Population, names: reg.names().to_vec(), stats }
    }

    fn hr(t: f64, v: f64) -> Measurement {
        Measurement { hour_offset: t, feature: "heart_rate".into(), value: v }
    }

    #[test]
    fn zero_z_sets_middle_bucket() {
        let spec = BucketSpec::default();
        assert_eq!(spec.bucket_of(0.0), 0);
        assert_eq!(spec.bucket_of(7.3), 4);
        assert_eq!(spec.bucket_of(-9.0), -4);
        assert_eq!(spec.bucket_of(0.5), 1);
        assert_eq!(spec.bucket_of(-0.5), -1);
        assert_eq!(spec.bucket_of(1.49), 1);

        let stats = stats_with(80.0, 10.0);
        let g = bin_hourly(&[hr(0.0, 80.0), hr(2.0, 153.0)], 4);
        let t = zscore_discretize(&g, &stats, &spec).unwrap();
        let f = 10;
        assert_eq!(t.active[0], vec![(f * 9 + 4) as u32]);
        assert_eq!(t.active[2], vec![(f * 9 + 8) as u32]);
        assert!(t.active[1].is_empty());
        assert_eq!(t.columns, 29 * 9);
    }

    #[test]
    fn degenerate_feature_emits_zero_bucket() {
        let stats = stats_with(80.0, 0.0);
        let g = bin_hourly(&[hr(1.0, 500.0)], 3);
        let t = zscore_discretize(&g, &stats, &BucketSpec::default()).unwrap();
        assert_eq!(t.active[1], vec![(10 * 9 + 4) as u32]);
    }

    #[test]
    fn feature_without_stats_is_all_zero() {
        let stats = stats_with(80.0, 1.0);
        let ms = vec![Measurement { hour_offset: 1.0, feature: "lactate".into(), value: 2.0 }];
        let t = zscore_discretize(&bin_hourly(&ms, 3), &stats, &BucketSpec::default()).unwrap();
        assert_eq!(t.nnz(), 0);
    }

    #[test]
    fn unknown_feature_is_hard_error() {
        let stats = stats_with(80.0, 1.0);
        let ms = vec![Measurement { hour_offset: 1.0, feature: "bogus".into(), value: 2.0 }];
        let err = zscore_discretize(&bin_hourly(&ms, 3), &stats, &BucketSpec::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownFeature(f) if f == "bogus"));
    }

    fn ep(age: f64, gender: &str, eth: &str) -> RawEpisode {
        RawEpisode {
            episode_id: "x".into(),
            age,
            gender: gender.into(),
            ethnicity: eth.into(),
            care_unit: None,
            measurements: vec![],
            outcome_time: None,
            discharge_time: 1.0,
            label: false,
        }
    }

    #[test]
    fn static_encoder_quartiles_and_top_k() {
        let train = [
            ep(20.0, "M", "WHITE"),
            ep(40.0, "F", "WHITE"),
            ep(60.0, "M", "BLACK"),
            ep(80.0, "F", "ASIAN"),
            ep(90.0, "M", "WHITE"),
        ];
        let refs: Vec<&RawEpisode> = train.iter().collect();
        let enc = StaticEncoder::fit(&refs, 2).unwrap();
        assert_eq!(enc.genders, ["F", "M"]);
        assert_eq!(enc.age_cutpoints, [40.0, 60.0, 80.0]);
        assert_eq!(enc.ethnicities, ["WHITE", "ASIAN"]);
        assert_eq!(enc.n_columns(), 2 + 4 + 3);
        assert_eq!(enc.age_quartile(40.0), 0);
        assert_eq!(enc.age_quartile(40.5), 1);
        assert_eq!(enc.age_quartile(99.0), 3);
        // BLACK falls into OTHER
        assert_eq!(enc.encode(&ep(61.0, "M", "BLACK")), vec![1, 2 + 2, 6 + 2]);
        assert_eq!(enc.encode(&ep(10.0, "X", "WHITE")), vec![2, 6]);
    }

    #[test]
    fn static_columns_replicated() {
        let reg = FeatureRegistry::standard();
        let g = bin_hourly(&[hr(0.0, 80.0), hr(1.0, 90.0)], 5);
        let stats = compute_feature_stats(&[&g], &reg, StdEstimator::Population);
        let mut t = zscore_discretize(&g, &stats, &BucketSpec::default()).unwrap();
        t.append_static(&[0, 3], 261, 270);
        for h in 0..5 {
            assert!(t.get(h, 261) && t.get(h, 264));
        }
        assert_eq!(t.columns, 270);
    }

    #[test]
    fn dense_roundtrip() {
        let t = BinaryFeatureTensor { hours: 2, columns: 3, active: vec![vec![0, 2], vec![]] };
        assert_eq!(BinaryFeatureTensor::from_dense(&t.to_dense()).unwrap(), t);
    }
}
