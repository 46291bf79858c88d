use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub means: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InsufficientData("no points to cluster".into()))?;
    if d == 0 {
        return Err(Error::invalid("zero-dimensional points"));
    }
    for p in points {
        if p.len() != d {
            return Err(Error::shape(d, p.len()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
    }
    Ok(d)
}

fn distinct_count(points: &[Vec<f64>], cap: usize) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len().min(cap)
}

fn nearest(p: &[f64], means: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, m) in means.iter().enumerate() {
        let d = sq_dist(p, m);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// stable. A cluster that empties is reseeded at the point farthest from
/// its current centre.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let d = check_points(points)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() < k || distinct_count(points, k) < k {
        return Err(Error::InsufficientData(format!("k = {k} exceeds the number of distinct points")));
    }
    let n = points.len();
    let mut rng = seed::rng(seed);

    let mut means: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &means[0])).collect();
    while means.len() < k {
        let total: f64 = dist.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in dist.iter().enumerate() {
            if w > 0.0 && r < w {
                pick = i;
                break;
            }
            r -= w;
        }
        if dist[pick] == 0.0 {
            pick = dist.iter().rposition(|&w| w > 0.0).expect("a distinct point remains");
        }
        means.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, &means[means.len() - 1]));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, dj) = nearest(p, &means);
            dist[i] = dj;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("some cluster holds two points");
                log::debug!("k-means: reseeding empty cluster {j} at point {far}");
                counts[assignments[far]] -= 1;
                for (s, v) in sums[assignments[far]].iter_mut().zip(&points[far]) {
                    *s -= v;
                }
                assignments[far] = j;
                dist[far] = 0.0;
                counts[j] = 1;
                sums[j] = points[far].clone();
            }
        }
        for j in 0..k {
            let c = counts[j] as f64;
            means[j] = sums[j].iter().map(|s| s / c).collect();
        }
    }
    Ok(KMeans { means, assignments, iterations, converged })
}
