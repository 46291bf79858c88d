//! Table-style report: per-cohort, macro and micro rows, one column per
//! model, with bootstrap intervals and significance against the baseline.

use std::fmt::Write as _;

use cohort_mtl::evaluation::{Metric, Scope, Winner};
use cohort_mtl::ingestion::{Split, TaskDataset};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::stages::{ClusterArtifact, EvaluationArtifact, KScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub point: Option<f64>,
    pub mean: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Against the baseline; absent for the baseline column itself.
    pub p_value: Option<f64>,
    pub tier: Option<String>,
    /// Significantly better than the other model of its comparison.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scope: String,
    pub n: usize,
    pub positives: usize,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metric: String,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config_digest: String,
    pub seed: u64,
    pub window_hours: usize,
    pub gap_hours: usize,
    pub n_episodes: usize,
    pub n_test: usize,
    pub k: usize,
    pub k_selection: Vec<KScore>,
    pub threshold_mode: String,
    pub sensitivity: f64,
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub baseline: String,
    pub models: Vec<String>,
    pub tables: Vec<MetricTable>,
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Auc => "AUC",
        Metric::Ppv => "PPV",
        Metric::Specificity => "Specificity",
    }
}

impl ReportDocument {
    pub fn build(
        cfg: &ExperimentConfig,
        digest: &str,
        ds: &TaskDataset,
        cluster: &ClusterArtifact,
        eval: &EvaluationArtifact,
    ) -> Self {
        let k = eval.k;
        let mut scopes: Vec<Scope> = (0..k).map(Scope::Cohort).collect();
        scopes.push(Scope::Macro);
        scopes.push(Scope::Micro);
        let base_report = &eval.reports.iter().find(|(v, _)| *v == eval.baseline).expect("baseline evaluated").1;
        let (n_test, pos_test) = base_report
            .per_cohort
            .iter()
            .fold((0, 0), |(n, p), r| (n + r.n, p + r.positives));

        let tables = Metric::ALL
            .iter()
            .map(|&m| {
                let rows = scopes
                    .iter()
                    .map(|&s| {
                        let (n, positives) = match s {
                            Scope::Cohort(c) => base_report.per_cohort.get(c).map(|r| (r.n, r.positives)).unwrap_or((0, 0)),
                            _ => (n_test, pos_test),
                        };
                        let cells = eval
                            .reports
                            .iter()
                            .map(|(v, rep)| {
                                let boot = rep.bootstrap.iter().find(|b| b.scope == s && b.metric == m).and_then(|b| b.summary);
                                let mut cell = Cell {
                                    point: rep.scope(s).and_then(|ms| ms.get(m)),
                                    mean: boot.map(|b| b.mean),
                                    lo: boot.map(|b| b.lo),
                                    hi: boot.map(|b| b.hi),
                                    p_value: None,
                                    tier: None,
                                    bold: false,
                                };
                                if *v == eval.baseline {
                                    // Bold when the baseline beat any challenger.
                                    cell.bold = eval.comparisons.iter().any(|(_, t)| {
                                        t.row(s, m).is_some_and(|r| r.winner == Some(Winner::B))
                                    });
                                } else if let Some(row) =
                                    eval.comparisons.iter().find(|(c, _)| c == v).and_then(|(_, t)| t.row(s, m))
                                {
                                    cell.p_value = row.p_value;
                                    cell.tier = row.tier.map(|t| t.symbol().to_string());
                                    cell.bold = row.winner == Some(Winner::A);
                                }
                                cell
                            })
                            .collect();
                        Row { scope: s.label(), n, positives, cells }
                    })
                    .collect();
                MetricTable { metric: metric_name(m).into(), rows }
            })
            .collect();

        let ecfg = cfg.eval_config();
        Self {
            config_digest: digest.to_string(),
            seed: cfg.seed,
            window_hours: ds.config.window.window_hours,
            gap_hours: ds.config.window.gap_hours,
            n_episodes: ds.len(),
            n_test: ds.indices(Split::Test).len(),
            k: cluster.k,
            k_selection: cluster.selection.clone(),
            threshold_mode: format!("{:?}", ecfg.threshold_mode).to_lowercase(),
            sensitivity: ecfg.sensitivity,
            n_bootstrap: ecfg.n_bootstrap,
            alpha: ecfg.alpha,
            baseline: eval.baseline.name().into(),
            models: eval.reports.iter().map(|(v, _)| v.name().to_string()).collect(),
            tables,
        }
    }
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn fmt_cell(c: &Cell) -> String {
    let mut s = fmt3(c.point);
    if let (Some(lo), Some(hi)) = (c.lo, c.hi) {
        let _ = write!(s, " [{lo:.3}, {hi:.3}]");
    }
    if c.bold {
        s = format!("**{s}**");
    }
    if let Some(t) = &c.tier {
        s.push(' ');
        s.push_str(t);
    }
    s
}

pub fn render_report(doc: &ReportDocument) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Cohort-aware mortality prediction report\n");
    let _ = writeln!(s, "- config digest: `{}`", doc.config_digest);
    let _ = writeln!(s, "- seed: {}", doc.seed);
    let _ = writeln!(s, "- window: {} h, gap: {} h", doc.window_hours, doc.gap_hours);
    let _ = writeln!(s, "- episodes: {} ({} test)", doc.n_episodes, doc.n_test);
    let _ = writeln!(s, "- cohorts (K): {}", doc.k);
    for ks in &doc.k_selection {
        let _ = writeln!(s, "  - K={}: validation macro AUC {}", ks.k, fmt3(ks.validation_macro_auc));
    }
    let _ = writeln!(
        s,
        "- thresholds at {:.0}% sensitivity, chosen on {} predictions",
        doc.sensitivity * 100.0,
        doc.threshold_mode
    );
    let _ = writeln!(s, "- intervals: 2.5-97.5 percentiles over {} stratified bootstrap resamples", doc.n_bootstrap);
    let _ = writeln!(
        s,
        "- bold: Wilcoxon signed-rank p < {} against `{}`; tiers ⋆ p<0.01, ⋄ p<0.001, † p<1e-5, ‡ p<1e-15",
        doc.alpha, doc.baseline
    );
    for t in &doc.tables {
        let _ = writeln!(s, "\n## {}\n", t.metric);
        let _ = write!(s, "| Scope | n | positives |");
        for m in &doc.models {
            let _ = write!(s, " {m} |");
        }
        let _ = write!(s, "\n|---|---:|---:|");
        for _ in &doc.models {
            s.push_str("---|");
        }
        s.push('\n');
        for r in &t.rows {
            let _ = write!(s, "| {} | {} | {} |", r.scope, r.n, r.positives);
            for c in &r.cells {
                let _ = write!(s, " {} |", fmt_cell(c));
            }
            s.push('\n');
        }
    }
    s
}
