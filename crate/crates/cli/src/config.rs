//! Experiment configuration. One TOML file drives every stage; its digest is
//! stamped into every artifact so outputs from different configs never mix.

use std::path::{Path, PathBuf};

use cohort_mtl::autoencoder::AutoencoderConfig;
use cohort_mtl::cohort::{CovarianceKind, GmmConfig};
use cohort_mtl::evaluation::{EvalConfig, ThresholdMode};
use cohort_mtl::ingestion::{BucketSpec, StdEstimator, TaskConfig, TaskWindow};
use cohort_mtl::predictors::{Hyper, TrainConfig, Variant};
use cohort_mtl::synth::PopulationSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub task: TaskSection,
    pub autoencoder: AutoencoderSection,
    pub gmm: GmmSection,
    pub predictor: PredictorSection,
    pub evaluation: EvaluationSection,
    pub plots: PlotSection,
}

/// Raw input files. When both are absent the `synth` stage provides them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub separation: f64,
    /// Per-cohort prevalence overrides.
    pub prevalences: Option<Vec<f64>>,
    /// Multiplies every cohort's outcome weights.
    pub outcome_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n: 3000, separation: 1.0, prevalences: None, outcome_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub window_hours: usize,
    pub gap_hours: usize,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub min_positives: usize,
    pub min_z: i32,
    pub max_z: i32,
    pub sample_std: bool,
    pub ethnicity_top_k: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        let t = TaskConfig::default();
        Self {
            window_hours: t.window.window_hours,
            gap_hours: t.window.gap_hours,
            test_fraction: t.test_fraction,
            val_fraction: t.val_fraction,
            min_positives: t.min_positives,
            min_z: t.buckets.min_z,
            max_z: t.buckets.max_z,
            sample_std: false,
            ethnicity_top_k: t.ethnicity_top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub d_candidates: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        let a = AutoencoderConfig::default();
        Self {
            d_candidates: vec![100],
            learning_rate: a.learning_rate,
            batch_size: a.batch_size,
            max_epochs: a.max_epochs,
            patience: a.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub k_candidates: Vec<usize>,
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub covariance: CovarianceKind,
    /// Regress static one-hot columns out of embeddings before clustering.
    pub adjust_statics: bool,
    /// Multi-task model used to score each candidate K on validation.
    pub selection_variant: Variant,
    pub selection_trunk: usize,
    pub selection_dense: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        let g = GmmConfig::default();
        Self {
            k_candidates: vec![2, 3, 4, 5],
            restarts: g.restarts,
            max_iterations: g.max_iterations,
            tolerance: g.tolerance,
            covariance: g.covariance,
            adjust_statics: true,
            selection_variant: Variant::MultitaskSepDense,
            selection_trunk: 32,
            selection_dense: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperMode {
    /// Grid search over random 7:1 splits of train + validation.
    Grid,
    /// Use `fixed` sizes without search.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedHyper {
    pub variant: Variant,
    pub trunk: usize,
    pub dense: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub variants: Vec<Variant>,
    /// Variant every other variant is compared against.
    pub baseline: Variant,
    pub hyper_mode: HyperMode,
    pub fixed: Vec<FixedHyper>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub trunk_grid: Vec<usize>,
    pub dense_grid: Vec<usize>,
    pub head_grid: Vec<usize>,
    pub selection_splits: usize,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            variants: vec![Variant::Global, Variant::MultitaskSepDense],
            baseline: Variant::Global,
            hyper_mode: HyperMode::Grid,
            fixed: Vec::new(),
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            trunk_grid: t.trunk_grid,
            dense_grid: t.dense_grid,
            head_grid: t.head_grid,
            selection_splits: t.selection_splits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub sensitivity: f64,
    pub threshold_mode: ThresholdMode,
    pub n_bootstrap: usize,
    pub alpha: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { sensitivity: e.sensitivity, threshold_mode: e.threshold_mode, n_bootstrap: e.n_bootstrap, alpha: e.alpha }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub features: Vec<String>,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self { features: vec!["heart_rate".into(), "mean_bp".into(), "lactate".into()] }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            task: TaskSection::default(),
            autoencoder: AutoencoderSection::default(),
            gmm: GmmSection::default(),
            predictor: PredictorSection::default(),
            evaluation: EvaluationSection::default(),
            plots: PlotSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form, so formatting and key order in
    /// the TOML file do not matter.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.data.episodes.is_some() != self.data.measurements.is_some() {
            return bad("data.episodes and data.measurements must be given together".into());
        }
        if self.synth.n == 0 || !(self.synth.separation >= 0.0) || !(self.synth.outcome_scale.is_finite()) {
            return bad("synth.n must be positive and separation non-negative".into());
        }
        self.task_config(0).window.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.task_config(0).buckets.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.task.test_fraction > 0.0 && self.task.test_fraction < 1.0)
            || !(self.task.val_fraction > 0.0 && self.task.val_fraction < 1.0)
        {
            return bad("task fractions must lie in (0, 1)".into());
        }
        let ae = &self.autoencoder;
        if ae.d_candidates.is_empty() || ae.d_candidates.contains(&0) {
            return bad("autoencoder.d_candidates must be non-empty and positive".into());
        }
        if !(ae.learning_rate > 0.0) || ae.batch_size == 0 || ae.max_epochs == 0 {
            return bad("autoencoder learning_rate, batch_size and max_epochs must be positive".into());
        }
        let g = &self.gmm;
        if g.k_candidates.is_empty() || g.k_candidates.contains(&0) || g.restarts == 0 || g.max_iterations == 0 {
            return bad("gmm.k_candidates must be non-empty and positive; restarts and max_iterations ≥ 1".into());
        }
        if !g.selection_variant.is_multitask() {
            return bad("gmm.selection_variant must be a multi-task variant".into());
        }
        if g.selection_trunk == 0 || g.selection_dense == 0 {
            return bad("gmm selection model sizes must be positive".into());
        }
        let p = &self.predictor;
        if p.variants.is_empty() {
            return bad("predictor.variants must not be empty".into());
        }
        let mut seen = p.variants.clone();
        seen.sort_by_key(|v| v.name());
        seen.dedup();
        if seen.len() != p.variants.len() {
            return bad("predictor.variants lists a variant twice".into());
        }
        if !p.variants.contains(&p.baseline) {
            return bad(format!("baseline {} is not among predictor.variants", p.baseline.name()));
        }
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if p.hyper_mode == HyperMode::Fixed {
            for v in &p.variants {
                match p.fixed.iter().find(|f| f.variant == *v) {
                    Some(f) if f.trunk > 0 && f.dense > 0 => {}
                    _ => return bad(format!("predictor.fixed needs positive sizes for {}", v.name())),
                }
            }
        }
        let e = &self.evaluation;
        if !(e.sensitivity > 0.0 && e.sensitivity <= 1.0) || e.n_bootstrap == 0 || !(e.alpha > 0.0 && e.alpha < 1.0) {
            return bad("evaluation needs sensitivity in (0, 1], n_bootstrap ≥ 1 and alpha in (0, 1)".into());
        }
        Ok(())
    }

    pub fn task_config(&self, seed: u64) -> TaskConfig {
        let t = &self.task;
        TaskConfig {
            window: TaskWindow { window_hours: t.window_hours, gap_hours: t.gap_hours },
            seed,
            test_fraction: t.test_fraction,
            val_fraction: t.val_fraction,
            min_positives: t.min_positives,
            buckets: BucketSpec { min_z: t.min_z, max_z: t.max_z },
            std_estimator: if t.sample_std { StdEstimator::Sample } else { StdEstimator::Population },
            ethnicity_top_k: t.ethnicity_top_k,
        }
    }

    pub fn population_spec(&self, seed: u64) -> PopulationSpec {
        let mut spec = PopulationSpec::default_with_size(self.synth.n, seed);
        spec.separation = self.synth.separation;
        if let Some(p) = &self.synth.prevalences {
            for (c, &v) in spec.cohorts.iter_mut().zip(p) {
                c.prevalence = v;
            }
        }
        let s = self.synth.outcome_scale;
        for c in &mut spec.cohorts {
            c.outcome_level.iter_mut().for_each(|w| *w *= s);
            c.outcome_slope.iter_mut().for_each(|w| *w *= s);
        }
        spec
    }

    pub fn autoencoder_config(&self) -> AutoencoderConfig {
        let a = &self.autoencoder;
        AutoencoderConfig { learning_rate: a.learning_rate, batch_size: a.batch_size, max_epochs: a.max_epochs, patience: a.patience }
    }

    pub fn gmm_config(&self) -> GmmConfig {
        let g = &self.gmm;
        GmmConfig {
            restarts: g.restarts,
            max_iterations: g.max_iterations,
            tolerance: g.tolerance,
            covariance: g.covariance,
            ..GmmConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let p = &self.predictor;
        TrainConfig {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            patience: p.patience,
            trunk_grid: p.trunk_grid.clone(),
            dense_grid: p.dense_grid.clone(),
            head_grid: p.head_grid.clone(),
            selection_splits: p.selection_splits,
            selection_val_fraction: self.task.val_fraction,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let e = &self.evaluation;
        EvalConfig { sensitivity: e.sensitivity, threshold_mode: e.threshold_mode, n_bootstrap: e.n_bootstrap, alpha: e.alpha }
    }

    pub fn fixed_hyper(&self, variant: Variant) -> Option<Hyper> {
        self.predictor
            .fixed
            .iter()
            .find(|f| f.variant == variant)
            .map(|f| Hyper { trunk: f.trunk, dense: f.dense })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.autoencoder.learning_rate, 0.001);
        assert_eq!(c.predictor.learning_rate, 0.0001);
        assert_eq!(c.gmm.restarts, 30);
        assert_eq!(c.evaluation.n_bootstrap, 100);
    }

    #[test]
    fn round_trip_and_digest() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back.digest(), c.digest());
        let other = ExperimentConfig { seed: 1, ..c.clone() };
        assert_ne!(other.digest(), c.digest());
        // Whitespace and key order do not change the digest.
        let a = ExperimentConfig::parse("seed = 3\n[synth]\nn = 50\nseparation = 2.0\n").unwrap();
        let b = ExperimentConfig::parse("[synth]\nseparation = 2.0\n  n = 50\n\n[task]\n").unwrap();
        assert_eq!(a.digest(), ExperimentConfig { seed: 3, ..b }.digest());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "[task]\nwindow_hours = 30",
            "[autoencoder]\nd_candidates = []",
            "[predictor]\nbaseline = \"separate\"",
            "[predictor]\nhyper_mode = \"fixed\"",
            "[gmm]\nselection_variant = \"global\"",
            "[data]\nepisodes = \"a.csv\"",
            "unknown = 1",
            "[predictor]\nhead_grid = [128]",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
