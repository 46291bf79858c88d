//! Per-cohort mean z trajectories, exported as CSV and rendered to SVG.

use std::fmt::Write as _;

use cohort_mtl::ingestion::{BinaryFeatureTensor, TensorLayout};
use serde::{Deserialize, Serialize};

/// Mean bucket value of one feature in one cohort, per hour. `None` where no
/// episode of the cohort observed the feature at that hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub cohort: usize,
    pub feature: String,
    pub mean_z: Vec<Option<f64>>,
    pub observed: Vec<usize>,
}

impl Trajectory {
    /// Least-squares slope over the observed hours, in z per hour.
    pub fn slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.mean_z.iter().enumerate().filter_map(|(h, v)| v.map(|z| (h as f64, z))).collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Uses each observed cell's bucket index as its z value. Empty cohorts and
/// features never observed (or absent from the layout) are skipped with a
/// warning.
pub fn centroid_trajectories(
    layout: &TensorLayout,
    tensors: &[&BinaryFeatureTensor],
    cohorts: &[usize],
    k: usize,
    features: &[String],
) -> Vec<Trajectory> {
    let hours = tensors.first().map(|t| t.hours).unwrap_or(0);
    let mut out = Vec::new();
    for c in 0..k {
        let members: Vec<&BinaryFeatureTensor> =
            tensors.iter().zip(cohorts).filter(|(_, &cc)| cc == c).map(|(t, _)| *t).collect();
        if members.is_empty() {
            log::warn!("cohort {c} is empty; no trajectories emitted");
            continue;
        }
        for name in features {
            let Some(f) = layout.features.iter().position(|n| n == name) else {
                log::warn!("feature `{name}` is not in the tensor layout; trajectory omitted");
                continue;
            };
            let range = layout.feature_range(f);
            let mut sum = vec![0.0; hours];
            let mut count = vec![0usize; hours];
            for t in &members {
                for (h, row) in t.active.iter().enumerate() {
                    if let Some(&col) = row.iter().find(|&&col| range.contains(&(col as usize))) {
                        sum[h] += layout.buckets.bucket_at(col as usize - range.start) as f64;
                        count[h] += 1;
                    }
                }
            }
            if count.iter().all(|&n| n == 0) {
                log::warn!("feature `{name}` never observed in cohort {c}; trajectory omitted");
                continue;
            }
            let mean_z = sum.iter().zip(&count).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
            out.push(Trajectory { cohort: c, feature: name.clone(), mean_z, observed: count });
        }
    }
    out
}

pub fn trajectories_csv(trajs: &[Trajectory]) -> String {
    let mut s = String::from("cohort,feature,hour,mean_z,n_observed\n");
    for t in trajs {
        for (h, (v, n)) in t.mean_z.iter().zip(&t.observed).enumerate() {
            let v = v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", t.cohort, t.feature, h, v, n);
        }
    }
    s
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// One panel per feature, one polyline per cohort.
pub fn trajectories_svg(trajs: &[Trajectory]) -> String {
    let mut features: Vec<&str> = Vec::new();
    for t in trajs {
        if !features.contains(&t.feature.as_str()) {
            features.push(&t.feature);
        }
    }
    let (pw, ph, margin) = (320.0, 220.0, 40.0);
    let width = pw * features.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{ph}" viewBox="0 0 {width} {ph}" font-family="sans-serif" font-size="11">"#
    );
    for (i, f) in features.iter().enumerate() {
        let x0 = i as f64 * pw;
        let mine: Vec<&Trajectory> = trajs.iter().filter(|t| t.feature == *f).collect();
        let hours = mine.iter().map(|t| t.mean_z.len()).max().unwrap_or(1).max(2);
        let vals = mine.iter().flat_map(|t| t.mean_z.iter().flatten().copied());
        let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            lo -= 1.0;
            hi += 1.0;
        }
        let px = |h: usize| x0 + margin + (pw - 2.0 * margin) * h as f64 / (hours - 1) as f64;
        let py = |z: f64| ph - margin - (ph - 2.0 * margin) * (z - lo) / (hi - lo);
        let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle">{f}</text>"#, x0 + pw / 2.0);
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{margin}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
            x0 + margin,
            pw - 2.0 * margin,
            ph - 2.0 * margin
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.2}</text>"#, x0 + margin - 3.0, margin + 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{lo:.2}</text>"#, x0 + margin - 3.0, ph - margin);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">hour</text>"#, x0 + pw / 2.0, ph - 10.0);
        for t in mine {
            let pts: Vec<String> = t
                .mean_z
                .iter()
                .enumerate()
                .filter_map(|(h, v)| v.map(|z| format!("{:.2},{:.2}", px(h), py(z))))
                .collect();
            let color = PALETTE[t.cohort % PALETTE.len()];
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
    }
    let mut cohorts: Vec<usize> = trajs.iter().map(|t| t.cohort).collect();
    cohorts.dedup();
    for (j, c) in cohorts.iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let _ = writeln!(s, r#"<text x="{:.1}" y="34" fill="{color}">cohort {c}</text>"#, 5.0 + 60.0 * j as f64);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use cohort_mtl::ingestion::BucketSpec;

    fn layout() -> TensorLayout {
        TensorLayout { features: vec!["a".into(), "b".into()], buckets: BucketSpec { min_z: -2, max_z: 2 }, static_columns: vec![] }
    }

    fn tensor(a_buckets: &[Option<i32>]) -> BinaryFeatureTensor {
        let l = layout();
        let active = a_buckets.iter().map(|b| b.map(|z| vec![l.column(0, z) as u32]).unwrap_or_default()).collect();
        BinaryFeatureTensor { hours: a_buckets.len(), columns: l.n_columns(), active }
    }

    #[test]
    fn single_cohort_is_global_mean_and_missing_feature_omitted() {
        let ts = [tensor(&[Some(-1), Some(0), None]), tensor(&[Some(1), None, Some(2)])];
        let refs: Vec<&BinaryFeatureTensor> = ts.iter().collect();
        let out = centroid_trajectories(&layout(), &refs, &[0, 0], 1, &["a".into(), "b".into(), "zz".into()]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mean_z, vec![Some(0.0), Some(0.0), Some(2.0)]);
        assert_eq!(out[0].observed, vec![2, 1, 1]);
    }

    #[test]
    fn opposing_trends_have_opposite_slopes() {
        let up = tensor(&[Some(-2), Some(-1), Some(0), Some(1), Some(2)]);
        let down = tensor(&[Some(2), Some(1), Some(0), Some(-1), Some(-2)]);
        let refs = vec![&up, &down, &up];
        let out = centroid_trajectories(&layout(), &refs, &[0, 1, 0], 3, &["a".into()]);
        assert_eq!(out.len(), 2, "empty cohort 2 skipped");
        assert!(out[0].slope().unwrap() > 0.0 && out[1].slope().unwrap() < 0.0);
        let svg = trajectories_svg(&out);
        assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2);
        assert_eq!(trajectories_csv(&out).lines().count(), 1 + 2 * 5);
    }
}
