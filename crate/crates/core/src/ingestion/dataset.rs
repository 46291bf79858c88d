use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::discretize::{zscore_discretize, BinaryFeatureTensor, BucketSpec, StaticEncoder, TensorLayout};
use super::grid::{bin_hourly, HourlyGrid};
use super::raw::RawEpisode;
use super::registry::FeatureRegistry;
use super::stats::{compute_feature_stats, FeatureStats, StdEstimator};
use crate::error::{Error, Result};
use crate::seed;

/// Observation window and prediction gap. Two configurations are supported:
/// 24 h of data predicting from 36 h, and 48 h of data predicting from 72 h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskWindow {
    pub window_hours: usize,
    pub gap_hours: usize,
}

impl TaskWindow {
    pub const H24: TaskWindow = TaskWindow { window_hours: 24, gap_hours: 12 };
    pub const H48: TaskWindow = TaskWindow { window_hours: 48, gap_hours: 24 };

    pub fn new(window_hours: usize, gap_hours: usize) -> Result<Self> {
        let w = TaskWindow { window_hours, gap_hours };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if *self == Self::H24 || *self == Self::H48 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "unsupported window/gap {}/{}; use 24/12 or 48/24",
                self.window_hours, self.gap_hours
            )))
        }
    }

    pub fn prediction_start(&self) -> f64 {
        (self.window_hours + self.gap_hours) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub window: TaskWindow,
    pub seed: u64,
    pub test_fraction: f64,
    /// Validation share of the non-test episodes (7:1 train:validation).
    pub val_fraction: f64,
    pub min_positives: usize,
    pub buckets: BucketSpec,
    pub std_estimator: StdEstimator,
    pub ethnicity_top_k: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            window: TaskWindow::H24,
            seed: 0,
            test_fraction: 0.2,
            val_fraction: 1.0 / 8.0,
            min_positives: 10,
            buckets: BucketSpec::default(),
            std_estimator: StdEstimator::Population,
            ethnicity_top_k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window_hours: usize,
    pub gap_hours: usize,
    pub seed: u64,
    pub stats_digest: String,
    pub n_episodes: usize,
    pub n_positive: usize,
    pub dropped_by_gap: usize,
}

/// Column-oriented per-episode data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetColumns {
    pub episode_id: Vec<String>,
    pub label: Vec<bool>,
    pub split: Vec<Split>,
    pub care_unit: Vec<Option<String>>,
    pub tensor: Vec<BinaryFeatureTensor>,
}

/// A filtered, labeled, split and discretized prediction task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub manifest: DatasetManifest,
    pub config: TaskConfig,
    pub layout: TensorLayout,
    pub stats: FeatureStats,
    pub statics: StaticEncoder,
    pub columns: DatasetColumns,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.columns.episode_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.columns.split[i] == split).collect()
    }

    pub fn tensors(&self, idx: &[usize]) -> Vec<&BinaryFeatureTensor> {
        idx.iter().map(|&i| &self.columns.tensor[i]).collect()
    }

    pub fn hours(&self) -> usize {
        self.manifest.window_hours
    }

    pub fn n_columns(&self) -> usize {
        self.layout.n_columns()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

/// Stratified assignment: per label class, `round(test_fraction * n)` go to
/// test, then `round(val_fraction * rest)` to validation, the remainder to train.
pub fn stratified_split(labels: &[bool], test_fraction: f64, val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut splits = vec![Split::Train; labels.len()];
    for (stream, class) in [false, true].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut seed::derived_rng(seed, stream as u64));
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        let n_val = (val_fraction * (idx.len() - n_test) as f64).round() as usize;
        for (r, &i) in idx.iter().enumerate() {
            splits[i] = if r < n_test {
                Split::Test
            } else if r < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    splits
}

/// Applies the gap filter, splits, fits statistics and static encodings on
/// the training split, and discretizes every episode.
pub fn build_task_dataset(
    episodes: &[RawEpisode],
    registry: &FeatureRegistry,
    cfg: &TaskConfig,
) -> Result<TaskDataset> {
    cfg.window.validate()?;
    cfg.buckets.validate()?;
    if !(0.0..1.0).contains(&cfg.test_fraction) || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::invalid("split fractions must lie in [0, 1)"));
    }
    let start = cfg.window.prediction_start();
    let kept: Vec<&RawEpisode> = episodes.iter().filter(|e| e.end_time() >= start).collect();
    let dropped_by_gap = episodes.len() - kept.len();
    let n_positive = kept.iter().filter(|e| e.label).count();
    if n_positive < cfg.min_positives {
        return Err(Error::InsufficientData(format!(
            "{n_positive} positive episodes after the gap filter, need at least {}",
            cfg.min_positives
        )));
    }

    let labels: Vec<bool> = kept.iter().map(|e| e.label).collect();
    let splits = stratified_split(&labels, cfg.test_fraction, cfg.val_fraction, cfg.seed);
    let hours = cfg.window.window_hours;
    let grids: Vec<HourlyGrid> = kept.iter().map(|e| bin_hourly(&e.measurements, hours)).collect();

    let train_grids: Vec<&HourlyGrid> = grids
        .iter()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .map(|(g, _)| g)
        .collect();
    let stats = compute_feature_stats(&train_grids, registry, cfg.std_estimator);
    let train_eps: Vec<&RawEpisode> = kept
        .iter()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .map(|(e, _)| *e)
        .collect();
    let statics = StaticEncoder::fit(&train_eps, cfg.ethnicity_top_k)?;
    let layout = TensorLayout {
        features: registry.names().to_vec(),
        buckets: cfg.buckets,
        static_columns: statics.column_names(),
    };

    let mut tensors = Vec::with_capacity(kept.len());
    for (e, g) in kept.iter().zip(&grids) {
        let mut t = zscore_discretize(g, &stats, &cfg.buckets)?;
        t.append_static(&statics.encode(e), layout.static_offset(), layout.n_columns());
        tensors.push(t);
    }

    Ok(TaskDataset {
        manifest: DatasetManifest {
            window_hours: hours,
            gap_hours: cfg.window.gap_hours,
            seed: cfg.seed,
            stats_digest: stats.digest(),
            n_episodes: kept.len(),
            n_positive,
            dropped_by_gap,
        },
        config: cfg.clone(),
        layout,
        stats,
        statics,
        columns: DatasetColumns {
            episode_id: kept.iter().map(|e| e.episode_id.clone()).collect(),
            label: labels,
            split: splits,
            care_unit: kept.iter().map(|e| e.care_unit.clone()).collect(),
            tensor: tensors,
        },
    })
}
