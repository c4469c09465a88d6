use serde::{Deserialize, Serialize};

use super::{mean_latent, EncoderParams};
use crate::gridworld::EpisodeSet;
use crate::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-3;
const IQR_TO_SIGMA: f64 = 1.349;
const EPS: f64 = 1e-8;

/// Robust per-dimension centre and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub version: u64,
    pub fit_bank_size: usize,
}

/// Linear interpolation between order statistics at position `q·(n−1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fit on raw descriptors; rows with non-finite entries are dropped.
pub fn fit_normalizer_from(descriptors: &[Vec<f64>], previous: Option<&Normalizer>) -> Result<Normalizer> {
    let valid: Vec<&Vec<f64>> = descriptors
        .iter()
        .filter(|d| !d.is_empty() && d.iter().all(|v| v.is_finite()))
        .collect();
    if valid.len() < 2 {
        return Err(Error::Insufficient(format!(
            "normaliser needs at least 2 valid descriptors, got {}",
            valid.len()
        )));
    }
    let dim = valid[0].len();
    if valid.iter().any(|d| d.len() != dim) {
        return Err(Error::shape(dim, "ragged descriptor rows"));
    }
    let mut mu = Vec::with_capacity(dim);
    let mut sigma = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut col: Vec<f64> = valid.iter().map(|d| d[k]).collect();
        col.sort_by(f64::total_cmp);
        mu.push(quantile(&col, 0.5));
        let iqr = quantile(&col, 0.75) - quantile(&col, 0.25);
        sigma.push((iqr / IQR_TO_SIGMA).max(SIGMA_MIN));
    }
    Ok(Normalizer {
        mu,
        sigma,
        version: previous.map_or(1, |p| p.version + 1),
        fit_bank_size: valid.len(),
    })
}

/// Fit on the mean latents of a bank of episode sets; empty or malformed
/// sets are discarded.
pub fn fit_normalizer(enc: &EncoderParams, bank: &[EpisodeSet], previous: Option<&Normalizer>) -> Result<Normalizer> {
    let descriptors: Vec<Vec<f64>> = bank
        .iter()
        .filter_map(|s| mean_latent(enc, s).ok())
        .map(|z| z.to_vec())
        .collect();
    fit_normalizer_from(&descriptors, previous)
}

/// `(z − μ) / (σ + 1e−8)`.
pub fn normalize(z: &[f64], n: &Normalizer) -> Vec<f64> {
    z.iter()
        .zip(n.mu.iter().zip(&n.sigma))
        .map(|(v, (m, s))| (v - m) / (s + EPS))
        .collect()
}
