use serde::{Deserialize, Serialize};

use super::model::{Hyper, Variant};
use super::train::{parameter_count, predict_batch, train_model, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::auc;
use crate::ingestion::{stratified_split, Split};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hyper: Hyper,
    pub n_params: usize,
    /// Validation AUC per split; `None` where training or scoring failed.
    pub split_auc: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub variant: Variant,
    pub best: Hyper,
    pub rows: Vec<GridRow>,
}

/// Scores every grid point by mean validation AUC over random stratified
/// train/validation splits of `pool`. Points failing on any split are
/// dropped; ties go to the smaller model.
pub fn grid_search(
    variant: Variant,
    pool: &[Sample<'_>],
    k: usize,
    cfg: &TrainConfig,
    master_seed: u64,
) -> Result<GridResult> {
    cfg.validate()?;
    let columns = pool
        .first()
        .ok_or_else(|| Error::InsufficientData("empty selection pool".into()))?
        .tensor
        .columns;
    let labels: Vec<bool> = pool.iter().map(|s| s.label).collect();
    let splits: Vec<(Vec<Sample>, Vec<Sample>)> = (0..cfg.selection_splits)
        .map(|s| {
            let assign = stratified_split(&labels, 0.0, cfg.selection_val_fraction, seed::derive_seed(master_seed, s as u64));
            let mut tr = Vec::new();
            let mut va = Vec::new();
            for (smp, sp) in pool.iter().zip(assign) {
                if sp == Split::Val { va.push(*smp) } else { tr.push(*smp) }
            }
            (tr, va)
        })
        .collect();

    let mut rows = Vec::new();
    for hyper in cfg.grid(variant) {
        let n_params = parameter_count(variant, columns, hyper, k)?;
        let mut split_auc = Vec::with_capacity(splits.len());
        for (s, (tr, va)) in splits.iter().enumerate() {
            let run_seed = seed::derive_seed(master_seed, 100 + s as u64);
            let score = train_model(variant, tr, va, k, hyper, cfg, run_seed).and_then(|m| {
                let p = predict_batch(&m, va)?;
                let l: Vec<bool> = va.iter().map(|x| x.label).collect();
                auc(&p, &l)
            });
            match score {
                Ok(a) => split_auc.push(Some(a)),
                Err(e) => {
                    log::warn!("grid {} {hyper:?} split {s}: {e}", variant.name());
                    split_auc.push(None);
                }
            }
        }
        let mean_auc = split_auc
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64);
        log::info!("grid {} {hyper:?}: {n_params} params, mean AUC {mean_auc:?}", variant.name());
        rows.push(GridRow { hyper, n_params, split_auc, mean_auc });
    }

    let best = rows
        .iter()
        .filter_map(|r| r.mean_auc.map(|m| (r, m)))
        .min_by(|(a, ma), (b, mb)| mb.total_cmp(ma).then(a.n_params.cmp(&b.n_params)).then(a.hyper.cmp(&b.hyper)))
        .map(|(r, _)| r.hyper)
        .ok_or_else(|| Error::Numerical(format!("no {} configuration trained on every split", variant.name())))?;
    Ok(GridResult { variant, best, rows })
}
