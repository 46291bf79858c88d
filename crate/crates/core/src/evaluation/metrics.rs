use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SENSITIVITY: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ppv,
    Specificity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auc, Metric::Ppv, Metric::Specificity];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Ppv => "PPV",
            Metric::Specificity => "Specificity",
        }
    }
}

fn check_pair(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    Ok(())
}

/// Area under the ROC curve from mid-ranks; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_pair(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUC needs both classes ({pos} positive, {neg} negative)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled ranks stay integral under mid-ranking.
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u64;
        pos_rank2 += rank2 * order[i..=j].iter().filter(|&&o| labels[o]).count() as u64;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / 2.0 / (p * n) as f64)
}

/// Largest threshold `t` with sensitivity of the rule `score >= t` at
/// least `target`: the `ceil(target * P)`-th highest positive score.
pub fn threshold_at_sensitivity(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    check_pair(scores, labels)?;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!("sensitivity target {target} outside (0, 1]")));
    }
    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    if pos.is_empty() {
        return Err(Error::UndefinedMetric("threshold needs at least one positive".into()));
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let need = ((target * pos.len() as f64 - 1e-9).ceil() as usize).clamp(1, pos.len());
    Ok(pos[need - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        check_pair(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn ppv(&self) -> Result<f64> {
        let d = self.tp + self.fp;
        if d == 0 {
            return Err(Error::UndefinedMetric("PPV with no predicted positives".into()));
        }
        Ok(self.tp as f64 / d as f64)
    }

    pub fn specificity(&self) -> Result<f64> {
        let d = self.tn + self.fp;
        if d == 0 {
            return Err(Error::UndefinedMetric("specificity with no negatives".into()));
        }
        Ok(self.tn as f64 / d as f64)
    }

    pub fn sensitivity(&self) -> Result<f64> {
        let d = self.tp + self.fn_;
        if d == 0 {
            return Err(Error::UndefinedMetric("sensitivity with no positives".into()));
        }
        Ok(self.tp as f64 / d as f64)
    }
}

pub fn ppv_specificity(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    let c = Confusion::at(scores, labels, threshold)?;
    Ok((c.ppv()?, c.specificity()?))
}

/// One metric on one set of predictions. PPV and specificity use
/// `threshold` when given, otherwise the threshold at `target` sensitivity
/// on these same predictions.
pub fn metric_value(metric: Metric, scores: &[f64], labels: &[bool], target: f64, threshold: Option<f64>) -> Result<f64> {
    if metric == Metric::Auc {
        return auc(scores, labels);
    }
    let t = match threshold {
        Some(t) => t,
        None => threshold_at_sensitivity(scores, labels, target)?,
    };
    let c = Confusion::at(scores, labels, t)?;
    match metric {
        Metric::Ppv => c.ppv(),
        Metric::Specificity => c.specificity(),
        Metric::Auc => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Group {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Group {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Scores and labels split by cohort.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupedPredictions {
    pub groups: Vec<Group>,
}

impl GroupedPredictions {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        for (k, g) in groups.iter().enumerate() {
            if g.scores.len() != g.labels.len() {
                return Err(Error::invalid(format!(
                    "cohort {k}: {} scores for {} labels",
                    g.scores.len(),
                    g.labels.len()
                )));
            }
            if g.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::invalid(format!("cohort {k}: score outside [0, 1]")));
            }
        }
        Ok(Self { groups })
    }

    /// Groups parallel arrays by cohort id; cohorts are `0..k`.
    pub fn from_parts(scores: &[f64], labels: &[bool], cohorts: &[usize], k: usize) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != cohorts.len() {
            return Err(Error::shape(scores.len(), format!("{}/{}", labels.len(), cohorts.len())));
        }
        let mut groups = vec![Group::default(); k];
        for ((&s, &l), &c) in scores.iter().zip(labels).zip(cohorts) {
            let g = groups
                .get_mut(c)
                .ok_or_else(|| Error::invalid(format!("cohort id {c} outside 0..{k}")))?;
            g.scores.push(s);
            g.labels.push(l);
        }
        Self::new(groups)
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.scores.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concatenated(&self) -> (Vec<f64>, Vec<bool>) {
        let scores = self.groups.iter().flat_map(|g| g.scores.iter().copied()).collect();
        let labels = self.groups.iter().flat_map(|g| g.labels.iter().copied()).collect();
        (scores, labels)
    }
}

/// The metric on all cohorts pooled as if from a single classifier.
pub fn micro_metric(grouped: &GroupedPredictions, metric: Metric, target: f64) -> Result<f64> {
    if grouped.groups.is_empty() {
        return Err(Error::invalid("no cohorts"));
    }
    let (s, l) = grouped.concatenated();
    metric_value(metric, &s, &l, target, None)
}

/// Arithmetic mean of per-cohort values.
pub fn macro_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("no per-cohort values to average"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// The metric within each cohort (own threshold each), then averaged.
pub fn macro_metric(grouped: &GroupedPredictions, metric: Metric, target: f64) -> Result<f64> {
    let bad: Vec<String> = grouped
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| {
            let p = g.positives();
            p == 0 || p == g.labels.len()
        })
        .map(|(k, _)| k.to_string())
        .collect();
    if !bad.is_empty() {
        return Err(Error::UndefinedMetric(format!("single-class cohort(s): {}", bad.join(", "))));
    }
    let values = grouped
        .groups
        .iter()
        .map(|g| metric_value(metric, &g.scores, &g.labels, target, None))
        .collect::<Result<Vec<f64>>>()?;
    macro_average(&values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_fixture() {
        let a = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn threshold_fixtures() {
        let l = [true; 4];
        assert_eq!(threshold_at_sensitivity(&[0.9, 0.7, 0.6, 0.2], &l, 0.8).unwrap(), 0.2);
        let l5 = [true; 5];
        assert_eq!(threshold_at_sensitivity(&[0.9, 0.8, 0.7, 0.6, 0.5], &l5, 0.8).unwrap(), 0.6);
        assert_eq!(threshold_at_sensitivity(&[0.3, 0.9], &[false, true], 0.8).unwrap(), 0.9);
        assert!(threshold_at_sensitivity(&[0.3], &[false], 0.8).is_err());
    }

    #[test]
    fn ppv_and_specificity() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let l = [false, false, true, true];
        assert_eq!(ppv_specificity(&s, &l, 0.5).unwrap(), (1.0, 1.0));
        assert_eq!(ppv_specificity(&s, &l, 0.0).unwrap(), (0.5, 0.0));
        assert!(matches!(ppv_specificity(&s, &l, 0.95), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn macro_fixtures() {
        let cases: [(&[f64], f64); 3] = [
            (&[0.819, 0.829, 0.821], 0.823),
            (&[0.803, 0.811, 0.814], 0.809),
            (&[0.862, 0.849, 0.814, 0.839, 0.846], 0.842),
        ];
        for (v, want) in cases {
            assert!((macro_average(v).unwrap() - want).abs() < 5e-4);
        }
    }

    #[test]
    fn macro_names_single_class_cohort() {
        let g = GroupedPredictions::new(vec![
            Group { scores: vec![0.1, 0.9], labels: vec![false, true] },
            Group { scores: vec![0.1, 0.2], labels: vec![false, false] },
        ])
        .unwrap();
        match macro_metric(&g, Metric::Auc, 0.8) {
            Err(Error::UndefinedMetric(m)) => assert!(m.contains('1')),
            other => panic!("{other:?}"),
        }
        assert!(GroupedPredictions::new(vec![Group { scores: vec![1.5], labels: vec![true] }]).is_err());
    }
}
