use serde::{Deserialize, Serialize};

use super::kmeans::{check_points, kmeans};
use crate::error::{Error, Result};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the change of mean per-point log-likelihood.
    pub tolerance: f64,
    pub covariance: CovarianceKind,
    /// Variance floor as a fraction of each dimension's data variance.
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            restarts: 30,
            max_iterations: 500,
            tolerance: 1e-6,
            covariance: CovarianceKind::Diagonal,
            variance_floor: 1e-6,
        }
    }
}

/// Per-component covariance. `Diagonal` holds variances; `Full` holds
/// row-major `d x d` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariances {
    Diagonal(Vec<Vec<f64>>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    /// Final total log-likelihood, `None` when the restart was discarded.
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Covariances,
    pub floor: Vec<f64>,
    pub seed: u64,
    pub log_likelihood: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
    /// Mean per-point log-likelihood after each E-step of the best restart.
    pub trace: Vec<f64>,
}

/// Lower Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Precomputed per-component terms for density evaluation.
enum Factor {
    Diag { inv_var: Vec<f64>, log_norm: f64 },
    Chol { l: Vec<f64>, log_norm: f64 },
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    cov: Vec<Vec<f64>>,
    kind: CovarianceKind,
}

impl Params {
    fn factors(&self, d: usize) -> Option<Vec<Factor>> {
        self.cov
            .iter()
            .map(|c| match self.kind {
                CovarianceKind::Diagonal => {
                    let log_det: f64 = c.iter().map(|v| v.ln()).sum();
                    Some(Factor::Diag {
                        inv_var: c.iter().map(|v| 1.0 / v).collect(),
                        log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
                    })
                }
                CovarianceKind::Full => {
                    let l = cholesky(c, d)?;
                    let log_det: f64 = (0..d).map(|i| 2.0 * l[i * d + i].ln()).sum();
                    Some(Factor::Chol { l, log_norm: -0.5 * (d as f64 * LN_2PI + log_det) })
                }
            })
            .collect()
    }
}

fn log_density(x: &[f64], mean: &[f64], f: &Factor, scratch: &mut [f64]) -> f64 {
    match f {
        Factor::Diag { inv_var, log_norm } => {
            let q: f64 = x
                .iter()
                .zip(mean)
                .zip(inv_var)
                .map(|((xi, mi), iv)| (xi - mi) * (xi - mi) * iv)
                .sum();
            log_norm - 0.5 * q
        }
        Factor::Chol { l, log_norm } => {
            let d = x.len();
            let mut q = 0.0;
            for i in 0..d {
                let mut s = x[i] - mean[i];
                for k in 0..i {
                    s -= l[i * d + k] * scratch[k];
                }
                scratch[i] = s / l[i * d + i];
                q += scratch[i] * scratch[i];
            }
            log_norm - 0.5 * q
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fills `resp` (n x k) with posteriors and returns the total log-likelihood.
fn e_step(points: &[Vec<f64>], p: &Params, resp: &mut [Vec<f64>]) -> Option<f64> {
    let d = points[0].len();
    let factors = p.factors(d)?;
    let log_w: Vec<f64> = p.weights.iter().map(|w| w.ln()).collect();
    let mut scratch = vec![0.0; d];
    let mut total = 0.0;
    for (x, r) in points.iter().zip(resp.iter_mut()) {
        for j in 0..p.weights.len() {
            r[j] = log_w[j] + log_density(x, &p.means[j], &factors[j], &mut scratch);
        }
        let lse = log_sum_exp(r);
        if !lse.is_finite() {
            return None;
        }
        total += lse;
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    Some(total)
}

/// Weighted maximum-likelihood update with variances clamped at the floor.
/// Components with no mass keep their previous parameters.
fn m_step(points: &[Vec<f64>], resp: &[Vec<f64>], floor: &[f64], p: &mut Params) {
    let (n, d, k) = (points.len(), points[0].len(), p.weights.len());
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        p.weights[j] = nk / n as f64;
        if nk <= f64::MIN_POSITIVE {
            continue;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in points.iter().zip(resp) {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += r[j] * xi;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        match p.kind {
            CovarianceKind::Diagonal => {
                let mut var = vec![0.0; d];
                for (x, r) in points.iter().zip(resp) {
                    for i in 0..d {
                        let z = x[i] - mean[i];
                        var[i] += r[j] * z * z;
                    }
                }
                for i in 0..d {
                    var[i] = (var[i] / nk).max(floor[i]);
                }
                p.cov[j] = var;
            }
            CovarianceKind::Full => {
                let mut cov = vec![0.0; d * d];
                for (x, r) in points.iter().zip(resp) {
                    for a in 0..d {
                        let za = r[j] * (x[a] - mean[a]);
                        for b in 0..=a {
                            cov[a * d + b] += za * (x[b] - mean[b]);
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..=a {
                        let v = cov[a * d + b] / nk;
                        cov[a * d + b] = v;
                        cov[b * d + a] = v;
                    }
                    cov[a * d + a] += floor[a];
                }
                p.cov[j] = cov;
            }
        }
        p.means[j] = mean;
    }
}

pub(crate) fn variance_floor(points: &[Vec<f64>], rel: f64) -> Vec<f64> {
    let (n, d) = (points.len() as f64, points[0].len());
    (0..d)
        .map(|i| {
            let mean = points.iter().map(|p| p[i]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[i] - mean).powi(2)).sum::<f64>() / n;
            (rel * var).max(1e-12)
        })
        .collect()
}

struct RestartFit {
    params: Params,
    log_likelihood: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run_restart(points: &[Vec<f64>], k: usize, cfg: &GmmConfig, floor: &[f64], seed: u64) -> Result<Option<RestartFit>> {
    let (n, d) = (points.len(), points[0].len());
    let km = kmeans(points, k, seed)?;
    let mut resp = vec![vec![0.0; k]; n];
    for (r, &a) in resp.iter_mut().zip(&km.assignments) {
        r[a] = 1.0;
    }
    let init_cov = match cfg.covariance {
        CovarianceKind::Diagonal => vec![floor.to_vec(); k],
        CovarianceKind::Full => vec![vec![0.0; d * d]; k],
    };
    let mut params = Params { weights: vec![0.0; k], means: km.means, cov: init_cov, kind: cfg.covariance };
    m_step(points, &resp, floor, &mut params);

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let Some(total) = e_step(points, &params, &mut resp) else {
            return Ok(None);
        };
        let mean_ll = total / n as f64;
        if let Some(&prev) = trace.last() {
            if (mean_ll - prev).abs() < cfg.tolerance {
                trace.push(mean_ll);
                converged = true;
                break;
            }
        }
        trace.push(mean_ll);
        if iterations >= cfg.max_iterations {
            break;
        }
        m_step(points, &resp, floor, &mut params);
        iterations += 1;
    }
    let log_likelihood = trace.last().unwrap() * n as f64;
    Ok(Some(RestartFit { params, log_likelihood, trace, iterations, converged }))
}

/// EM from `cfg.restarts` k-means initialisations; the restart with the
/// highest training log-likelihood is kept (earliest on ties).
pub fn fit_gmm(points: &[Vec<f64>], k: usize, cfg: &GmmConfig, seed: u64) -> Result<GmmModel> {
    let d = check_points(points)?;
    if cfg.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let floor = variance_floor(points, cfg.variance_floor);
    let mut records = Vec::with_capacity(cfg.restarts);
    let mut best: Option<(usize, RestartFit)> = None;
    for r in 0..cfg.restarts {
        let rs = seed::derive_seed(seed, r as u64);
        match run_restart(points, k, cfg, &floor, rs)? {
            Some(fit) if fit.log_likelihood.is_finite() => {
                records.push(RestartRecord {
                    seed: rs,
                    log_likelihood: Some(fit.log_likelihood),
                    iterations: fit.iterations,
                    converged: fit.converged,
                });
                if best.as_ref().is_none_or(|(_, b)| fit.log_likelihood > b.log_likelihood) {
                    best = Some((r, fit));
                }
            }
            _ => {
                log::warn!("GMM restart {r} (K = {k}) produced a non-finite likelihood; discarded");
                records.push(RestartRecord { seed: rs, log_likelihood: None, iterations: 0, converged: false });
            }
        }
    }
    let (best_restart, fit) =
        best.ok_or_else(|| Error::Numerical(format!("every GMM restart diverged for K = {k}")))?;
    if !fit.converged {
        log::warn!("GMM K = {k}: best restart hit the iteration cap without converging");
    }
    let covariances = match cfg.covariance {
        CovarianceKind::Diagonal => Covariances::Diagonal(fit.params.cov),
        CovarianceKind::Full => Covariances::Full(fit.params.cov),
    };
    Ok(GmmModel {
        k,
        dim: d,
        weights: fit.params.weights,
        means: fit.params.means,
        covariances,
        floor,
        seed,
        log_likelihood: fit.log_likelihood,
        best_restart,
        restarts: records,
        trace: fit.trace,
    })
}

impl GmmModel {
    fn params(&self) -> Params {
        let (kind, cov) = match &self.covariances {
            Covariances::Diagonal(c) => (CovarianceKind::Diagonal, c.clone()),
            Covariances::Full(c) => (CovarianceKind::Full, c.clone()),
        };
        Params { weights: self.weights.clone(), means: self.means.clone(), cov, kind }
    }

    /// Posterior responsibilities for each point.
    pub fn responsibilities(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for p in points {
            if p.len() != self.dim {
                return Err(Error::shape(self.dim, p.len()));
            }
        }
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut resp = vec![vec![0.0; self.k]; points.len()];
        e_step(points, &self.params(), &mut resp)
            .ok_or_else(|| Error::Numerical("point has zero density under every component".into()))?;
        Ok(resp)
    }

    /// Total log-likelihood of `points`.
    pub fn score(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut resp = vec![vec![0.0; self.k]; points.len()];
        if points.iter().any(|p| p.len() != self.dim) {
            return Err(Error::shape(self.dim, points.iter().find(|p| p.len() != self.dim).unwrap().len()));
        }
        e_step(points, &self.params(), &mut resp)
            .ok_or_else(|| Error::Numerical("non-finite log-likelihood".into()))
    }

    /// Reorders components so that new component `i` is old `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<GmmModel> {
        let mut seen = vec![false; self.k];
        if order.len() != self.k || order.iter().any(|&o| o >= self.k || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::invalid("not a permutation of the components"));
        }
        let pick = |v: &Vec<Vec<f64>>| order.iter().map(|&o| v[o].clone()).collect::<Vec<_>>();
        let mut m = self.clone();
        m.weights = order.iter().map(|&o| self.weights[o]).collect();
        m.means = pick(&self.means);
        m.covariances = match &self.covariances {
            Covariances::Diagonal(c) => Covariances::Diagonal(pick(c)),
            Covariances::Full(c) => Covariances::Full(pick(c)),
        };
        Ok(m)
    }

    pub fn min_variance(&self) -> f64 {
        match &self.covariances {
            Covariances::Diagonal(c) => c.iter().flatten().cloned().fold(f64::INFINITY, f64::min),
            Covariances::Full(c) => c
                .iter()
                .flat_map(|m| (0..self.dim).map(move |i| m[i * self.dim + i]))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Argmax with ties toward the lower index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cohort id and responsibilities for one embedding.
pub fn assign_cohort(model: &GmmModel, embedding: &[f64]) -> Result<(usize, Vec<f64>)> {
    let r = model.responsibilities(&[embedding.to_vec()])?.pop().unwrap();
    Ok((argmax_lowest(&r), r))
}
