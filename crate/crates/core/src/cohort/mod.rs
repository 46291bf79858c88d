//! Gaussian mixture clustering of episode embeddings into cohorts.

mod adjust;
mod gmm;
mod kmeans;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjust::{static_columns, StaticAdjustment};
pub use gmm::{argmax_lowest, assign_cohort, fit_gmm, CovarianceKind, Covariances, GmmConfig, GmmModel, RestartRecord};
pub use kmeans::{kmeans, KMeans, MAX_LLOYD_ITERATIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub episode_id: String,
    pub cohort_id: usize,
    pub responsibilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAssignment {
    pub k: usize,
    pub rows: Vec<AssignmentRow>,
}

impl CohortAssignment {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cohort_ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.cohort_id).collect()
    }

    pub fn by_episode(&self) -> HashMap<&str, usize> {
        self.rows.iter().map(|r| (r.episode_id.as_str(), r.cohort_id)).collect()
    }

    pub fn cohort_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for r in &self.rows {
            sizes[r.cohort_id] += 1;
        }
        sizes
    }

    /// CSV export: `episode_id,cohort_id,r0,...,r{K-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["episode_id".to_string(), "cohort_id".to_string()];
        header.extend((0..self.k).map(|j| format!("r{j}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.episode_id.clone(), r.cohort_id.to_string()];
            rec.extend(r.responsibilities.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assigns every embedding to its posterior-argmax component.
pub fn assign_all(model: &GmmModel, episode_ids: &[String], embeddings: &[Vec<f64>]) -> Result<CohortAssignment> {
    if episode_ids.len() != embeddings.len() {
        return Err(Error::shape(episode_ids.len(), embeddings.len()));
    }
    let resp = model.responsibilities(embeddings)?;
    let rows = episode_ids
        .iter()
        .zip(resp)
        .map(|(id, r)| AssignmentRow { episode_id: id.clone(), cohort_id: argmax_lowest(&r), responsibilities: r })
        .collect();
    Ok(CohortAssignment { k: model.k, rows })
}

/// Picks the cluster count with the best downstream validation score;
/// ties go to the smaller count.
pub fn select_num_clusters(scores: &[(usize, f64)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, s) in scores {
        if s.is_nan() {
            continue;
        }
        best = match best {
            Some((bk, bs)) if bs > s || (bs == s && bk <= k) => Some((bk, bs)),
            _ => Some((k, s)),
        };
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::invalid("no cluster-count candidates with a score"))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientData("ARI needs at least two items".into()));
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = rows.values().map(|&v| c2(v)).sum();
    let sb: f64 = cols.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
