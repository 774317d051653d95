//! Rank-sum test and score summaries.

use statrs::function::erf::erfc;

use crate::error::{usage, Result};

/// Pooled sample size up to which p-values come from the exact null
/// distribution of U (given the observed ties).
pub const EXACT_MAX_POOLED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample: number of (a, b) pairs with a > b,
    /// ties counting one half.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Mann-Whitney U test.
///
/// Small samples (pooled size ≤ [`EXACT_MAX_POOLED`]) use the exact
/// permutation distribution of the rank sum, which handles ties. Larger
/// samples use the normal approximation with tie-corrected variance and a
/// continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return usage("Mann-Whitney U needs two non-empty samples");
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return usage("Mann-Whitney U got a NaN score");
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let exact = na + nb <= EXACT_MAX_POOLED;
    let p = if exact { exact_p(&ranks, na, u) } else { normal_p(&pooled, na, nb, u) };
    Ok(MannWhitney { u, p: p.min(1.0), exact })
}

/// P(|U − E U| ≥ |u − E U|) under random assignment of the pooled ranks.
fn exact_p(ranks: &[f64], na: usize, u: f64) -> f64 {
    let n = ranks.len();
    // doubled midranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; na + 1];
    ways[0][0] = 1.0;
    for (i, &r) in doubled.iter().enumerate() {
        for j in (1..=na.min(i + 1)).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            for s in (r..=max_sum).rev() {
                hi[0][s] += lo[j - 1][s - r];
            }
        }
    }
    let offset = na * (na + 1); // doubled minimum rank sum
    let mean_u2 = (na * (n - na)) as f64; // 2·E[U]
    let observed = (2.0 * u - mean_u2).abs();
    let total: f64 = ways[na].iter().sum();
    let extreme: f64 = ways[na]
        .iter()
        .enumerate()
        .filter(|(s, w)| **w > 0.0 && *s >= offset && ((*s - offset) as f64 - mean_u2).abs() >= observed - 1e-9)
        .map(|(_, w)| w)
        .sum();
    extreme / total
}

fn normal_p(pooled: &[f64], na: usize, nb: usize, u: f64) -> f64 {
    let n = (na + nb) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let (na, nb) = (na as f64, nb as f64);
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2)
}

/// Mean, standard error (sample stdev / √n) and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(Summary { n: values.len(), mean, stderr: var.sqrt() / n.sqrt(), max })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}
