//! Tanh-estimator normalization and the fixed mean/min/max fusion rules used
//! as baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spread constant of the tanh estimator.
pub const TANH_SPREAD: f64 = 0.01;

/// Maps raw similarity scores into (0, 1) using genuine-score statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanhNormalizer {
    pub mu: f64,
    pub sigma: f64,
}

/// Sample mean and unbiased standard deviation of the genuine scores.
pub fn fit_tanh(genuine_scores: &[f64]) -> Result<TanhNormalizer> {
    let n = genuine_scores.len();
    if n < 2 {
        return Err(Error::insufficient(format!(
            "tanh normalizer needs at least 2 genuine scores, got {n}"
        )));
    }
    let mu = genuine_scores.iter().sum::<f64>() / n as f64;
    let ss: f64 = genuine_scores.iter().map(|s| (s - mu).powi(2)).sum();
    let sigma = (ss / (n - 1) as f64).sqrt();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::insufficient("genuine scores have zero variance"));
    }
    Ok(TanhNormalizer { mu, sigma })
}

impl TanhNormalizer {
    pub fn apply(&self, s: f64) -> f64 {
        tanh_apply(self, s)
    }
}

pub fn tanh_apply(n: &TanhNormalizer, s: f64) -> f64 {
    0.5 * ((TANH_SPREAD * ((s - n.mu) / n.sigma)).tanh() + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    Mean,
    Min,
    Max,
}

pub fn rule_fuse(normalized: &[f64], rule: Rule) -> Result<f64> {
    if normalized.is_empty() {
        return Err(Error::invalid("rule fusion over an empty score list"));
    }
    let v = match rule {
        Rule::Mean => normalized.iter().sum::<f64>() / normalized.len() as f64,
        Rule::Min => normalized.iter().copied().fold(f64::INFINITY, f64::min),
        Rule::Max => normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(v)
}
