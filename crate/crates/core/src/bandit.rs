//! Per-edge Bayesian return statistics and best-arm-identification rules.
//!
//! Each (node, action) edge keeps `(n, μ̄, σ̄², q_max)`. The return model is
//! hierarchical: σ² ~ Scaled-Inv-χ²(n+1, σ̄²), μ | σ² ~ N(μ̄, σ²/n) and
//! Q | μ, σ² ~ N(μ, σ²). σ̄² carries a pseudo-count: it starts at σ₀ and
//! equals (σ₀ + Σ(Q_i − μ̄)²)/(n + 1).

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{usage, Result};

/// Cap on TTTS re-sampling rounds before falling back to posterior means.
pub const TTTS_MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    /// Largest return seen; −∞ before the first observation.
    pub q_max: f64,
    /// Running sum of returns. The mean is kept as `sum / n` so it agrees
    /// bit for bit with a batch recomputation over the same sequence.
    pub sum: f64,
}

impl NodeStats {
    pub fn new(sigma0: f64) -> Self {
        NodeStats { n: 0, mean: 0.0, var: sigma0, q_max: f64::NEG_INFINITY, sum: 0.0 }
    }

    /// Statistics with the given moments, as if `n` returns averaging `mean`
    /// had been observed; `q_max` is set to the mean.
    pub fn from_moments(n: u64, mean: f64, var: f64) -> Self {
        NodeStats { n, mean, var, q_max: if n > 0 { mean } else { f64::NEG_INFINITY }, sum: mean * n as f64 }
    }

    pub fn visited(&self) -> bool {
        self.n > 0
    }

    /// Folds one more return into the statistics.
    pub fn update(&self, q: f64) -> NodeStats {
        let n = self.n as f64;
        let sum = self.sum + q;
        let mean = sum / (n + 1.0);
        let var = (n + 1.0) * self.var / (n + 2.0) + (q - self.mean) * (q - mean) / (n + 2.0);
        NodeStats { n: self.n + 1, mean, var, q_max: self.q_max.max(q), sum }
    }

    /// A draw of σ² from Scaled-Inv-χ²(n + 1, σ̄²).
    pub fn sample_variance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let nu = self.n as f64 + 1.0;
        let chi2 = ChiSquared::new(nu).expect("ν ≥ 1").sample(rng);
        nu * self.var / chi2
    }

    /// One Thompson draw of Q from the posterior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sigma2 = self.sample_variance(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let mu = self.mean + (sigma2 / self.n.max(1) as f64).sqrt() * z1;
        let z2: f64 = StandardNormal.sample(rng);
        mu + sigma2.sqrt() * z2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Uniform,
    Max,
    Ucb1,
    Ttts,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Max => "max",
            Strategy::Ucb1 => "ucb1",
            Strategy::Ttts => "ttts",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Strategy::Uniform),
            "max" => Ok(Strategy::Max),
            "ucb1" => Ok(Strategy::Ucb1),
            "ttts" => Ok(Strategy::Ttts),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditConfig {
    pub sigma0: f64,
    pub alpha: f64,
    pub strategy: Strategy,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig { sigma0: 0.2, alpha: 0.5, strategy: Strategy::Uniform }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0) {
            return usage(format!("σ₀ must be positive, got {}", self.sigma0));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return usage(format!("TTTS α must lie in (0, 1), got {}", self.alpha));
        }
        Ok(())
    }

    /// Picks an arm index into `arms` (which must be non-empty).
    pub fn select<R: Rng + ?Sized>(&self, arms: &[NodeStats], rng: &mut R) -> usize {
        match self.strategy {
            Strategy::Uniform => select_uniform(arms.len(), rng),
            Strategy::Max => select_max(arms),
            Strategy::Ucb1 => select_ucb1(arms),
            Strategy::Ttts => select_ttts(arms, self.alpha, rng),
        }
    }
}

/// First index maximising `key`; lowest index wins ties.
fn argmax_by(arms: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in arms {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn first_unvisited(arms: &[NodeStats]) -> Option<usize> {
    arms.iter().position(|s| !s.visited())
}

pub fn select_uniform<R: Rng + ?Sized>(arm_count: usize, rng: &mut R) -> usize {
    assert!(arm_count > 0, "no arms to select from");
    rng.random_range(0..arm_count)
}

/// Greedy on μ̄ after every arm has been tried once.
pub fn select_max(arms: &[NodeStats]) -> usize {
    assert!(!arms.is_empty(), "no arms to select from");
    first_unvisited(arms).unwrap_or_else(|| argmax_by(arms.iter().map(|s| s.mean).enumerate()).unwrap())
}

/// μ̄_a + sqrt(2 ln N / n_a) with N = Σ n_a; unvisited arms first.
pub fn select_ucb1(arms: &[NodeStats]) -> usize {
    assert!(!arms.is_empty(), "no arms to select from");
    if let Some(i) = first_unvisited(arms) {
        return i;
    }
    let total: u64 = arms.iter().map(|s| s.n).sum();
    let log_n = (total as f64).ln();
    argmax_by(arms.iter().map(|s| s.mean + (2.0 * log_n / s.n as f64).sqrt()).enumerate()).unwrap()
}

/// Index of the largest posterior draw.
pub fn thompson_winner<R: Rng + ?Sized>(arms: &[NodeStats], rng: &mut R) -> usize {
    argmax_by(arms.iter().map(|s| s.sample(rng)).enumerate()).unwrap()
}

/// Top-two Thompson sampling. Unvisited arms are tried first. Otherwise the
/// Thompson winner is returned with probability 1 − α; with probability α
/// Thompson sampling is repeated until a different arm wins.
pub fn select_ttts<R: Rng + ?Sized>(arms: &[NodeStats], alpha: f64, rng: &mut R) -> usize {
    assert!(!arms.is_empty(), "no arms to select from");
    if arms.len() == 1 {
        return 0;
    }
    if let Some(i) = first_unvisited(arms) {
        return i;
    }
    let leader = thompson_winner(arms, rng);
    if rng.random::<f64>() >= alpha {
        return leader;
    }
    for _ in 0..TTTS_MAX_RESAMPLES {
        let challenger = thompson_winner(arms, rng);
        if challenger != leader {
            return challenger;
        }
    }
    argmax_by(arms.iter().enumerate().filter(|(i, _)| *i != leader).map(|(i, s)| (i, s.mean))).unwrap()
}
