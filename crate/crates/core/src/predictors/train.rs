use serde::{Deserialize, Serialize};

use super::model::{HeadLayout, Hyper, RiskExample, RiskNet, RiskObjective, Variant};
use crate::error::{Error, Result};
use crate::ingestion::BinaryFeatureTensor;
use crate::nn::{fit, FitOptions, TrainCurve};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub trunk_grid: Vec<usize>,
    /// Dense sizes searched for single-task models.
    pub dense_grid: Vec<usize>,
    /// Per-cohort dense sizes searched for multi-task models.
    pub head_grid: Vec<usize>,
    pub selection_splits: usize,
    pub selection_val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            max_epochs: 100,
            patience: 6,
            trunk_grid: vec![16, 32, 64, 128],
            dense_grid: vec![16, 32, 64],
            head_grid: vec![8, 16, 32],
            selection_splits: 5,
            selection_val_fraction: 1.0 / 8.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("learning rate, batch size and epochs must be positive"));
        }
        for (name, g) in [("trunk", &self.trunk_grid), ("dense", &self.dense_grid), ("head", &self.head_grid)] {
            if g.is_empty() || g.contains(&0) {
                return Err(Error::invalid(format!("{name} grid must be non-empty and positive")));
            }
        }
        let max_head = self.head_grid.iter().max().unwrap();
        let max_dense = self.dense_grid.iter().max().unwrap();
        if max_head > max_dense {
            return Err(Error::invalid(format!(
                "largest head size {max_head} exceeds largest global dense size {max_dense}"
            )));
        }
        if self.selection_splits == 0 || !(self.selection_val_fraction > 0.0 && self.selection_val_fraction < 1.0) {
            return Err(Error::invalid("selection needs at least one split and a validation fraction in (0, 1)"));
        }
        Ok(())
    }

    pub fn grid(&self, variant: Variant) -> Vec<Hyper> {
        let dense = if variant.is_multitask() { &self.head_grid } else { &self.dense_grid };
        let mut g: Vec<Hyper> = self
            .trunk_grid
            .iter()
            .flat_map(|&trunk| dense.iter().map(move |&d| Hyper { trunk, dense: d }))
            .collect();
        g.sort();
        g.dedup();
        g
    }
}

/// A labelled episode with its cohort.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub tensor: &'a BinaryFeatureTensor,
    pub label: bool,
    pub cohort: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub net: RiskNet,
    pub params: Vec<f64>,
    pub curve: TrainCurve,
}

/// Trained predictor. Global and multi-task models hold one member;
/// separate models hold one per cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub variant: Variant,
    pub k: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub members: Vec<Member>,
    /// Cohorts whose head saw no training examples.
    pub untrained_heads: Vec<usize>,
}

impl RiskModel {
    pub fn n_params(&self) -> usize {
        self.members.iter().map(|m| m.net.n_params).sum()
    }
}

pub fn parameter_count(variant: Variant, columns: usize, hyper: Hyper, k: usize) -> Result<usize> {
    let (heads, layout, copies) = architecture(variant, k);
    Ok(RiskNet::new(columns, hyper, heads, layout)?.n_params * copies)
}

fn architecture(variant: Variant, k: usize) -> (usize, HeadLayout, usize) {
    match variant {
        Variant::Global => (1, HeadLayout::SharedDense, 1),
        Variant::Separate => (1, HeadLayout::SharedDense, k),
        Variant::MultitaskSepDense => (k, HeadLayout::SeparateDense, 1),
        Variant::MultitaskSharedDense => (k, HeadLayout::SharedDense, 1),
    }
}

fn check_samples(samples: &[Sample<'_>], k: usize, columns: usize) -> Result<()> {
    for s in samples {
        if s.cohort >= k {
            return Err(Error::invalid(format!("cohort id {} outside 0..{k}", s.cohort)));
        }
        if s.tensor.columns != columns || s.tensor.active.len() != s.tensor.hours {
            return Err(Error::shape(format!("{columns} columns"), format!("{} columns", s.tensor.columns)));
        }
    }
    Ok(())
}

/// Trains one model. Multi-task examples update the shared trunk and their
/// own head only; batches mix cohorts. Early stopping watches `val` loss.
pub fn train_model(
    variant: Variant,
    train: &[Sample<'_>],
    val: &[Sample<'_>],
    k: usize,
    hyper: Hyper,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RiskModel> {
    let first = train
        .first()
        .ok_or_else(|| Error::InsufficientData("no training examples".into()))?;
    let columns = first.tensor.columns;
    let k = if variant.is_cohort_aware() { k } else { k.max(1) };
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    check_samples(train, k, columns)?;
    check_samples(val, k, columns)?;

    let opts = |stream: u64| FitOptions {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: seed::derive_seed(seed, 1000 + stream),
    };
    let (heads, layout, copies) = architecture(variant, k);
    let mut members = Vec::with_capacity(copies);
    let mut untrained = Vec::new();

    if variant == Variant::Separate {
        for c in 0..k {
            let net = RiskNet::new(columns, hyper, 1, layout)?;
            let tr: Vec<RiskExample> = train
                .iter()
                .filter(|s| s.cohort == c)
                .map(|s| RiskExample { tensor: s.tensor, label: s.label, head: 0 })
                .collect();
            if tr.is_empty() {
                return Err(Error::InsufficientData(format!("cohort {c} has no training examples")));
            }
            let va: Vec<RiskExample> = val
                .iter()
                .filter(|s| s.cohort == c)
                .map(|s| RiskExample { tensor: s.tensor, label: s.label, head: 0 })
                .collect();
            let mut params = net.init_params(seed::derive_seed(seed, c as u64));
            let obj = RiskObjective { net: &net };
            let curve = fit(&obj, &mut params, &tr.iter().collect::<Vec<_>>(), &va.iter().collect::<Vec<_>>(), &opts(c as u64))?;
            members.push(Member { net, params, curve });
        }
    } else {
        let net = RiskNet::new(columns, hyper, heads, layout)?;
        let route = |s: &Sample<'_>| if variant.is_multitask() { s.cohort } else { 0 };
        let tr: Vec<RiskExample> = train
            .iter()
            .map(|s| RiskExample { tensor: s.tensor, label: s.label, head: route(s) })
            .collect();
        let va: Vec<RiskExample> = val
            .iter()
            .map(|s| RiskExample { tensor: s.tensor, label: s.label, head: route(s) })
            .collect();
        for h in 0..heads {
            if !tr.iter().any(|e| e.head == h) {
                log::warn!("cohort {h} has no training examples; its head stays at initialisation");
                untrained.push(h);
            }
        }
        let mut params = net.init_params(seed::derive_seed(seed, 0));
        let obj = RiskObjective { net: &net };
        let curve = fit(&obj, &mut params, &tr.iter().collect::<Vec<_>>(), &va.iter().collect::<Vec<_>>(), &opts(0))?;
        members.push(Member { net, params, curve });
    }
    Ok(RiskModel {
        variant,
        k,
        hyper,
        seed,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        members,
        untrained_heads: untrained,
    })
}

/// Probability of the positive class. Cohort-aware variants need the
/// episode's cohort.
pub fn predict_risk(model: &RiskModel, tensor: &BinaryFeatureTensor, cohort: Option<usize>) -> Result<f64> {
    let (member, head) = match model.variant {
        Variant::Global => (0, 0),
        v => {
            let c = cohort.ok_or_else(|| Error::invalid(format!("{} model needs a cohort id", v.name())))?;
            if c >= model.k {
                return Err(Error::invalid(format!("cohort id {c} outside 0..{}", model.k)));
            }
            if v == Variant::Separate {
                (c, 0)
            } else {
                (0, c)
            }
        }
    };
    let m = &model.members[member];
    m.net.check(tensor)?;
    Ok(m.net.probability(&m.params, tensor, head))
}

pub fn predict_batch(model: &RiskModel, samples: &[Sample<'_>]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| predict_risk(model, s.tensor, Some(s.cohort)))
        .collect()
}
