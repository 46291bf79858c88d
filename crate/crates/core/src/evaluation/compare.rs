use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_resample, summarize, Summary};
use super::metrics::{GroupedPredictions, Metric};
use super::report::{lookup, point_metrics, resolve_thresholds, scopes, EvalConfig, Scope};
use super::wilcoxon::{significance_tier, wilcoxon_signed_rank, Tier};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scope: Scope,
    pub metric: Metric,
    pub a: Option<Summary>,
    pub b: Option<Summary>,
    /// Resamples where both models had a defined value.
    pub n_pairs: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub tier: Option<Tier>,
    pub winner: Option<Winner>,
    pub note: Option<String>,
    /// Per resample `(a, b)` values.
    pub series: Vec<(Option<f64>, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, scope: Scope, metric: Metric) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scope == scope && r.metric == metric)
    }
}

fn same_episodes(a: &GroupedPredictions, b: &GroupedPredictions) -> Result<()> {
    if a.k() != b.k() {
        return Err(Error::shape(format!("{} cohorts", a.k()), format!("{} cohorts", b.k())));
    }
    for (k, (ga, gb)) in a.groups.iter().zip(&b.groups).enumerate() {
        if ga.labels != gb.labels {
            return Err(Error::invalid(format!("cohort {k}: the two prediction sets cover different episodes")));
        }
    }
    Ok(())
}

/// Paired bootstrap comparison: both models are scored on the same
/// resamples and the per-resample differences go to a Wilcoxon
/// signed-rank test for every metric and scope.
pub fn compare_models(
    a: &GroupedPredictions,
    b: &GroupedPredictions,
    validation: Option<(&GroupedPredictions, &GroupedPredictions)>,
    cfg: &EvalConfig,
    master_seed: u64,
) -> Result<ComparisonTable> {
    same_episodes(a, b)?;
    if cfg.n_bootstrap == 0 {
        return Err(Error::invalid("comparison needs at least one bootstrap resample"));
    }
    let fixed_a = resolve_thresholds(cfg, validation.map(|v| v.0), a.k())?;
    let fixed_b = resolve_thresholds(cfg, validation.map(|v| v.1), b.k())?;
    let all = scopes(a.k());
    let mut series: Vec<Vec<(Option<f64>, Option<f64>)>> = vec![Vec::new(); all.len() * 3];
    for i in 0..cfg.n_bootstrap {
        let sample = bootstrap_resample(a, seed::derive_seed(master_seed, i as u64))?;
        let (ra, rb) = (sample.apply(a)?, sample.apply(b)?);
        let (ca, mia, maa) = point_metrics(&ra, cfg.sensitivity, fixed_a.as_ref());
        let (cb, mib, mab) = point_metrics(&rb, cfg.sensitivity, fixed_b.as_ref());
        for (si, &s) in all.iter().enumerate() {
            for (mi, &m) in Metric::ALL.iter().enumerate() {
                series[si * 3 + mi].push((lookup(s, &ca, &mia, &maa, m), lookup(s, &cb, &mib, &mab, m)));
            }
        }
    }

    let mut rows = Vec::new();
    for (si, &scope) in all.iter().enumerate() {
        for (mi, &metric) in Metric::ALL.iter().enumerate() {
            let ser = std::mem::take(&mut series[si * 3 + mi]);
            let va: Vec<f64> = ser.iter().filter_map(|p| p.0).collect();
            let vb: Vec<f64> = ser.iter().filter_map(|p| p.1).collect();
            let diffs: Vec<f64> = ser
                .iter()
                .filter_map(|&(x, y)| Some(x? - y?))
                .collect();
            let mut row = ComparisonRow {
                scope,
                metric,
                a: summarize(&va),
                b: summarize(&vb),
                n_pairs: diffs.len(),
                statistic: None,
                p_value: None,
                tier: None,
                winner: None,
                note: None,
                series: ser,
            };
            if diffs.is_empty() {
                row.note = Some("undefined".into());
            } else {
                match wilcoxon_signed_rank(&diffs) {
                    Ok(w) => {
                        row.statistic = Some(w.statistic);
                        row.p_value = Some(w.p_value);
                        row.tier = significance_tier(w.p_value);
                        if w.p_value < cfg.alpha {
                            let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
                            row.winner = Some(if mean_diff > 0.0 { Winner::A } else { Winner::B });
                        }
                    }
                    Err(Error::Degenerate(_)) => row.note = Some("no difference".into()),
                    Err(e) => return Err(e),
                }
            }
            rows.push(row);
        }
    }
    Ok(ComparisonTable { n_bootstrap: cfg.n_bootstrap, alpha: cfg.alpha, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::metrics::Group;
    use rand::Rng;

    fn random_pair(seed_: u64, noise_b: f64) -> (GroupedPredictions, GroupedPredictions) {
        let mut rng = seed::rng(seed_);
        let mut ga = Vec::new();
        let mut gb = Vec::new();
        for _ in 0..3 {
            let labels: Vec<bool> = (0..200).map(|i| i % 5 == 0).collect();
            let a: Vec<f64> = labels
                .iter()
                .map(|&l| (if l { 0.6 } else { 0.4 } + rng.random_range(-0.3..0.3f64)).clamp(0.0, 1.0))
                .collect();
            let b: Vec<f64> = a
                .iter()
                .map(|&s| (s + rng.random_range(-noise_b..noise_b)).clamp(0.0, 1.0))
                .collect();
            ga.push(Group { scores: a, labels: labels.clone() });
            gb.push(Group { scores: b, labels });
        }
        (GroupedPredictions::new(ga).unwrap(), GroupedPredictions::new(gb).unwrap())
    }

    #[test]
    fn identical_models_show_no_difference() {
        let (a, _) = random_pair(1, 0.1);
        let cfg = EvalConfig { n_bootstrap: 30, ..Default::default() };
        let t = compare_models(&a, &a, None, &cfg, 5).unwrap();
        assert_eq!(t.rows.len(), 5 * 3);
        for r in &t.rows {
            assert_eq!(r.note.as_deref(), Some("no difference"));
            assert!(r.winner.is_none());
        }
    }

    #[test]
    fn dominating_model_wins() {
        let mut hits = 0;
        for s in 0..20 {
            let (a, b) = random_pair(s, 0.5);
            let cfg = EvalConfig { n_bootstrap: 100, ..Default::default() };
            let t = compare_models(&a, &b, None, &cfg, s).unwrap();
            let row = t.row(Scope::Macro, Metric::Auc).unwrap();
            if row.p_value.unwrap() < 0.01 && row.winner == Some(Winner::A) {
                hits += 1;
            }
        }
        assert!(hits >= 19, "{hits}");
    }

    #[test]
    fn mismatched_episodes_rejected() {
        let (a, _) = random_pair(1, 0.1);
        let (mut b, _) = random_pair(2, 0.1);
        b.groups[0].labels[1] = !b.groups[0].labels[1];
        assert!(compare_models(&a, &b, None, &EvalConfig::default(), 0).is_err());
    }
}
