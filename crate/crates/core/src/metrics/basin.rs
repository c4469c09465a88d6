//! Local-basin view of one source→target transfer: do source-competent
//! neighbours of the source-best elite transfer better than it does?

use serde::{Deserialize, Serialize};

use crate::archive::distance;
use crate::embedder::quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSample {
    pub source: String,
    pub target: String,
    pub candidate_id: u64,
    pub f_src: f64,
    pub y_tgt: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinStats {
    pub source_best: u64,
    pub good: usize,
    pub basin: usize,
    pub delta_good: f64,
    pub delta_local: f64,
    pub span75: f64,
    /// `(ρ, δ)` for every member of the good-enough set, by rank.
    pub deltas: Vec<(f64, f64)>,
}

pub fn basin_analysis(samples: &[TransferSample], gamma: f64, tau_rank: f64) -> Result<BasinStats> {
    if samples.is_empty() {
        return Err(Error::Empty("basin analysis needs at least one sample".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) || !(tau_rank > 0.0 && tau_rank <= 1.0) {
        return Err(Error::Config(format!("gamma {gamma} and tau_rank {tau_rank} must lie in (0, 1]")));
    }
    let best = samples
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.f_src.total_cmp(&b.f_src).then(b.candidate_id.cmp(&a.candidate_id)))
        .map(|(i, _)| i)
        .expect("non-empty");
    let sb = &samples[best];
    let cut = gamma * sb.f_src;
    let dist: Vec<f64> = samples.iter().map(|s| distance(&s.z, &sb.z)).collect();
    let mut good: Vec<usize> = (0..samples.len()).filter(|&i| i == best || samples[i].f_src >= cut).collect();
    good.sort_by(|&a, &b| {
        dist[a]
            .total_cmp(&dist[b])
            .then((b == best).cmp(&(a == best)))
            .then(samples[a].candidate_id.cmp(&samples[b].candidate_id))
    });
    let denom = (good.len().max(2) - 1) as f64;
    let deltas: Vec<(f64, f64)> = good
        .iter()
        .enumerate()
        .map(|(r, &i)| (r as f64 / denom, samples[i].y_tgt - sb.y_tgt))
        .collect();
    let delta_good = deltas.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let local: Vec<f64> = deltas.iter().filter(|d| d.0 <= tau_rank).map(|d| d.1).collect();
    let delta_local = local.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut gd: Vec<f64> = good.iter().map(|&i| dist[i]).collect();
    gd.sort_by(f64::total_cmp);
    let max_all = dist.iter().copied().fold(0.0, f64::max);
    let span75 = if max_all > 0.0 { quantile(&gd, 0.75) / max_all } else { 0.0 };
    Ok(BasinStats {
        source_best: sb.candidate_id,
        good: good.len(),
        basin: local.len(),
        delta_good,
        delta_local,
        span75,
        deltas,
    })
}

/// Mean δ per equal-width rank bin over `[0, 1]`; empty bins are `None`.
pub fn rank_bins(deltas: &[(f64, f64)], bins: usize) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for &(rho, d) in deltas {
        let b = ((rho * bins as f64) as usize).min(bins.saturating_sub(1));
        sum[b] += d;
        cnt[b] += 1;
    }
    sum.iter().zip(&cnt).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect()
}
