use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_resample, summarize, Summary};
use super::metrics::{auc, macro_average, threshold_at_sensitivity, Confusion, GroupedPredictions, Metric, DEFAULT_SENSITIVITY};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Thresholds chosen on the predictions being scored.
    #[default]
    Test,
    /// Thresholds chosen on validation predictions and held fixed.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sensitivity: f64,
    pub threshold_mode: ThresholdMode,
    pub n_bootstrap: usize,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { sensitivity: DEFAULT_SENSITIVITY, threshold_mode: ThresholdMode::Test, n_bootstrap: 100, alpha: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Cohort(usize),
    Macro,
    Micro,
}

impl Scope {
    pub fn label(self) -> String {
        match self {
            Scope::Cohort(k) => format!("Cohort {k}"),
            Scope::Macro => "Macro".into(),
            Scope::Micro => "Micro".into(),
        }
    }
}

/// Metric values; `None` where the metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: Option<f64>,
    pub ppv: Option<f64>,
    pub specificity: Option<f64>,
    pub threshold: Option<f64>,
}

impl MetricSet {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Auc => self.auc,
            Metric::Ppv => self.ppv,
            Metric::Specificity => self.specificity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub cohort: usize,
    pub n: usize,
    pub positives: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub scope: Scope,
    pub metric: Metric,
    pub summary: Option<Summary>,
    pub series: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold_mode: ThresholdMode,
    pub sensitivity: f64,
    pub per_cohort: Vec<CohortRow>,
    pub micro: MetricSet,
    #[serde(rename = "macro")]
    pub macro_: MetricSet,
    pub bootstrap: Vec<BootstrapRow>,
}

impl EvalReport {
    pub fn scope(&self, s: Scope) -> Option<&MetricSet> {
        match s {
            Scope::Cohort(k) => self.per_cohort.get(k).map(|r| &r.metrics),
            Scope::Macro => Some(&self.macro_),
            Scope::Micro => Some(&self.micro),
        }
    }
}

/// Fixed thresholds per cohort and for the pooled predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub per_cohort: Vec<Option<f64>>,
    pub micro: Option<f64>,
}

impl Thresholds {
    pub fn fit(grouped: &GroupedPredictions, sensitivity: f64) -> Self {
        let per_cohort = grouped
            .groups
            .iter()
            .map(|g| threshold_at_sensitivity(&g.scores, &g.labels, sensitivity).ok())
            .collect();
        let (s, l) = grouped.concatenated();
        Self { per_cohort, micro: threshold_at_sensitivity(&s, &l, sensitivity).ok() }
    }
}

fn metric_set(scores: &[f64], labels: &[bool], threshold: Option<f64>) -> MetricSet {
    let conf = threshold.and_then(|t| Confusion::at(scores, labels, t).ok());
    MetricSet {
        auc: auc(scores, labels).ok(),
        ppv: conf.and_then(|c| c.ppv().ok()),
        specificity: conf.and_then(|c| c.specificity().ok()),
        threshold,
    }
}

fn macro_set(cohorts: &[MetricSet]) -> MetricSet {
    let avg = |m: Metric| -> Option<f64> {
        let v: Option<Vec<f64>> = cohorts.iter().map(|c| c.get(m)).collect();
        v.and_then(|v| macro_average(&v).ok())
    };
    MetricSet { auc: avg(Metric::Auc), ppv: avg(Metric::Ppv), specificity: avg(Metric::Specificity), threshold: None }
}

/// Per-cohort, micro and macro metrics of one prediction set.
pub(crate) fn point_metrics(
    grouped: &GroupedPredictions,
    sensitivity: f64,
    fixed: Option<&Thresholds>,
) -> (Vec<MetricSet>, MetricSet, MetricSet) {
    let own;
    let th = match fixed {
        Some(t) => t,
        None => {
            own = Thresholds::fit(grouped, sensitivity);
            &own
        }
    };
    let cohorts: Vec<MetricSet> = grouped
        .groups
        .iter()
        .zip(&th.per_cohort)
        .map(|(g, &t)| metric_set(&g.scores, &g.labels, t))
        .collect();
    let (s, l) = grouped.concatenated();
    let micro = metric_set(&s, &l, th.micro);
    let macro_ = macro_set(&cohorts);
    (cohorts, micro, macro_)
}

pub(crate) fn scopes(k: usize) -> Vec<Scope> {
    (0..k).map(Scope::Cohort).chain([Scope::Macro, Scope::Micro]).collect()
}

pub(crate) fn lookup(s: Scope, cohorts: &[MetricSet], micro: &MetricSet, macro_: &MetricSet, m: Metric) -> Option<f64> {
    match s {
        Scope::Cohort(k) => cohorts[k].get(m),
        Scope::Macro => macro_.get(m),
        Scope::Micro => micro.get(m),
    }
}

pub(crate) fn resolve_thresholds(cfg: &EvalConfig, validation: Option<&GroupedPredictions>, k: usize) -> Result<Option<Thresholds>> {
    match cfg.threshold_mode {
        ThresholdMode::Test => Ok(None),
        ThresholdMode::Validation => {
            let v = validation.ok_or_else(|| Error::invalid("validation threshold mode needs validation predictions"))?;
            if v.k() != k {
                return Err(Error::shape(k, v.k()));
            }
            Ok(Some(Thresholds::fit(v, cfg.sensitivity)))
        }
    }
}

/// Point metrics plus bootstrap summaries over `cfg.n_bootstrap`
/// class-stratified resamples.
pub fn evaluate(
    test: &GroupedPredictions,
    validation: Option<&GroupedPredictions>,
    cfg: &EvalConfig,
    master_seed: u64,
) -> Result<EvalReport> {
    if test.groups.is_empty() {
        return Err(Error::invalid("no cohorts to evaluate"));
    }
    let fixed = resolve_thresholds(cfg, validation, test.k())?;
    let (cohorts, micro, macro_) = point_metrics(test, cfg.sensitivity, fixed.as_ref());
    let all = scopes(test.k());

    let mut series: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(cfg.n_bootstrap); all.len() * 3];
    for b in 0..cfg.n_bootstrap {
        let sample = bootstrap_resample(test, seed::derive_seed(master_seed, b as u64))?.apply(test)?;
        let (c, mi, ma) = point_metrics(&sample, cfg.sensitivity, fixed.as_ref());
        for (si, &s) in all.iter().enumerate() {
            for (mi_idx, &m) in Metric::ALL.iter().enumerate() {
                series[si * 3 + mi_idx].push(lookup(s, &c, &mi, &ma, m));
            }
        }
    }
    let mut bootstrap = Vec::new();
    for (si, &s) in all.iter().enumerate() {
        for (mi_idx, &m) in Metric::ALL.iter().enumerate() {
            let ser = std::mem::take(&mut series[si * 3 + mi_idx]);
            let defined: Vec<f64> = ser.iter().flatten().copied().collect();
            bootstrap.push(BootstrapRow { scope: s, metric: m, summary: summarize(&defined), series: ser });
        }
    }

    let per_cohort = test
        .groups
        .iter()
        .zip(cohorts)
        .enumerate()
        .map(|(k, (g, metrics))| CohortRow { cohort: k, n: g.labels.len(), positives: g.positives(), metrics })
        .collect();
    Ok(EvalReport { threshold_mode: cfg.threshold_mode, sensitivity: cfg.sensitivity, per_cohort, micro, macro_, bootstrap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::metrics::{micro_metric, Group};

    fn fixture() -> GroupedPredictions {
        GroupedPredictions::new(vec![
            Group { scores: vec![0.1, 0.4, 0.35, 0.8, 0.2], labels: vec![false, false, true, true, false] },
            Group { scores: vec![0.3, 0.9, 0.6, 0.5], labels: vec![true, true, false, false] },
        ])
        .unwrap()
    }

    #[test]
    fn report_matches_direct_metrics() {
        let g = fixture();
        let cfg = EvalConfig { n_bootstrap: 20, ..Default::default() };
        let r = evaluate(&g, None, &cfg, 1).unwrap();
        assert_eq!(r.per_cohort[0].metrics.auc, Some(auc(&g.groups[0].scores, &g.groups[0].labels).unwrap()));
        assert_eq!(r.micro.auc, Some(micro_metric(&g, Metric::Auc, 0.8).unwrap()));
        let mean = (r.per_cohort[0].metrics.auc.unwrap() + r.per_cohort[1].metrics.auc.unwrap()) / 2.0;
        assert_eq!(r.macro_.auc, Some(mean));
        assert_eq!(r.bootstrap.len(), 4 * 3);
        assert!(r.bootstrap.iter().all(|b| b.series.len() == 20));
    }

    #[test]
    fn validation_mode_needs_validation_predictions() {
        let g = fixture();
        let cfg = EvalConfig { threshold_mode: ThresholdMode::Validation, n_bootstrap: 2, ..Default::default() };
        assert!(evaluate(&g, None, &cfg, 0).is_err());
        let r = evaluate(&g, Some(&g), &cfg, 0).unwrap();
        let t = evaluate(&g, None, &EvalConfig { n_bootstrap: 2, ..Default::default() }, 0).unwrap();
        assert_eq!(r.per_cohort, t.per_cohort);
    }
}
