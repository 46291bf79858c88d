//! Raw episode loading, inclusion criteria, hourly binning and z-score
//! discretization into sparse binary tensors.

pub mod dataset;
pub mod discretize;
pub mod grid;
pub mod raw;
pub mod registry;
pub mod stats;

pub use dataset::{build_task_dataset, stratified_split, Split, TaskConfig, TaskDataset, TaskWindow};
pub use discretize::{zscore_discretize, BinaryFeatureTensor, BucketSpec, StaticEncoder, TensorLayout};
pub use grid::{bin_hourly, HourlyGrid};
pub use raw::{apply_inclusion, read_raw_episodes, read_raw_files, write_raw_episodes, Measurement, RawEpisode, RecordIssue};
pub use registry::FeatureRegistry;
pub use stats::{compute_feature_stats, FeatureStat, FeatureStats, StdEstimator};
