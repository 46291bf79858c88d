use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Above this many nonzero differences the normal approximation is used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Mid-ranks of `|d|`, doubled so they stay integral.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        for &o in &order[i..=j] {
            ranks[o] = (i + j + 2) as u64;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// `P(min(T+, T-) <= w2 / 2)` under the sign-flip null, by dynamic
/// programming over the doubled-rank sums.
fn exact_p(ranks2: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let below: f64 = counts[..=w2 as usize].iter().sum();
    let p = 2.0 * below / 2f64.powi(ranks2.len() as i32);
    p.min(1.0)
}

fn normal_p(n: usize, w: f64, ties: &[usize]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w - mean + 0.5).min(0.0) / var.sqrt();
    erfc(-z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped and
/// tied magnitudes share their mid-rank.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite difference"));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks2, ties) = doubled_ranks(&abs);
    let plus2: u64 = ranks2.iter().zip(&nz).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let w2 = plus2.min(total2 - plus2);
    let n = nz.len();
    let statistic = w2 as f64 / 2.0;
    if n <= EXACT_MAX_N {
        Ok(WilcoxonResult { statistic, p_value: exact_p(&ranks2, w2), n, exact: true })
    } else {
        Ok(WilcoxonResult { statistic, p_value: normal_p(n, statistic, &ties), n, exact: false })
    }
}

/// Exact p-value at any `n`, for checking the approximation.
pub fn wilcoxon_exact_p(diffs: &[f64]) -> Result<f64> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks2, _) = doubled_ranks(&abs);
    let plus2: u64 = ranks2.iter().zip(&nz).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    Ok(exact_p(&ranks2, plus2.min(total2 - plus2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Star,
    Diamond,
    Dagger,
    DoubleDagger,
}

impl Tier {
    pub fn symbol(self) -> &'static str {
        match self {
            Tier::Star => "⋆",
            Tier::Diamond => "⋄",
            Tier::Dagger => "†",
            Tier::DoubleDagger => "‡",
        }
    }
}

/// Significance band of a p-value; `None` at or above 0.01.
pub fn significance_tier(p: f64) -> Option<Tier> {
    if p < 1e-15 {
        Some(Tier::DoubleDagger)
    } else if p < 1e-5 {
        Some(Tier::Dagger)
    } else if p < 1e-3 {
        Some(Tier::Diamond)
    } else if p < 1e-2 {
        Some(Tier::Star)
    } else {
        None
    }
}
