//! Retention and recoverability metrics over a run log, plus the basin,
//! novelty, geometry and lineage analyses.

mod basin;
mod geometry;
mod lineage;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use basin::{basin_analysis, rank_bins, BasinStats, TransferSample};
pub use geometry::{geometry, geometry_of, novelty_norm, Geometry};
pub use lineage::{lineage_matrices, GroupSplit, LineageReport, LineageSample, UNTAGGED};

use crate::{Error, Result};

pub const TAU_MIN: f64 = 0.1;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    ScratchCalibrated,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskThreshold {
    pub tag: String,
    pub tau: f64,
    pub source: ThresholdSource,
}

/// `max(0.9 · mean(best), τ_min)`; the floor (or an empty list) marks the
/// threshold as a fallback.
pub fn compute_threshold(tag: &str, best_srs: &[f64], tau_min: f64) -> Result<TaskThreshold> {
    if !(tau_min > 0.0 && tau_min < 1.0) {
        return Err(Error::Config(format!("tau_min {tau_min} outside (0, 1)")));
    }
    if best_srs.is_empty() {
        return Ok(TaskThreshold {
            tag: tag.to_string(),
            tau: tau_min,
            source: ThresholdSource::Fallback,
        });
    }
    let mean = best_srs.iter().sum::<f64>() / best_srs.len() as f64;
    let calibrated = 0.9 * mean;
    let (tau, source) = if calibrated >= tau_min {
        (calibrated, ThresholdSource::ScratchCalibrated)
    } else {
        (tau_min, ThresholdSource::Fallback)
    };
    Ok(TaskThreshold {
        tag: tag.to_string(),
        tau,
        source,
    })
}

/// First checkpoint step with `SR ≥ τ`, or `budget` if none.
pub fn ttt(curve: &[(usize, f64)], tau: f64, budget: usize) -> usize {
    curve.iter().find(|c| c.1 >= tau).map_or(budget, |c| c.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub tag: String,
    pub base_tag: String,
    pub sr_post: f64,
    pub sr_end: f64,
    pub curve: Vec<(usize, f64)>,
    pub budget: usize,
}

impl VisitRecord {
    pub fn is_revisit(&self) -> bool {
        self.tag.ends_with('\'')
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub visits: Vec<VisitRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub bwt: f64,
    pub coverage: f64,
    pub nbwt: Option<f64>,
    pub tr: f64,
}

fn tau_for(thresholds: &BTreeMap<String, f64>, base: &str) -> Result<f64> {
    thresholds
        .get(base)
        .copied()
        .ok_or_else(|| Error::Config(format!("no threshold for task {base}")))
}

/// Retention over every visit except the last one (the current task).
pub fn retention_metrics(log: &RunLog, thresholds: &BTreeMap<String, f64>) -> Result<Retention> {
    if log.visits.len() < 2 {
        return Err(Error::Insufficient("retention needs at least one previous task".into()));
    }
    let prev = &log.visits[..log.visits.len() - 1];
    let n = prev.len() as f64;
    let mut bwt = 0.0;
    let mut covered = 0usize;
    let mut retained = 0usize;
    let mut nbwt = 0.0;
    for v in prev {
        let tau = tau_for(thresholds, &v.base_tag)?;
        bwt += v.sr_end - v.sr_post;
        if v.sr_post >= tau {
            covered += 1;
            nbwt += (v.sr_end - v.sr_post) / v.sr_post.max(EPS);
        }
        if v.sr_end >= tau {
            retained += 1;
        }
    }
    Ok(Retention {
        bwt: bwt / n,
        coverage: covered as f64 / n,
        nbwt: (covered > 0).then(|| nbwt / covered as f64),
        tr: retained as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub tag: String,
    pub tau: f64,
    pub sr_post: f64,
    pub sr_end: f64,
    pub ttt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_sr: f64,
    /// Mean time-to-threshold over all visits, in environment steps.
    pub ttt: f64,
    pub ttt_revisit: Option<f64>,
    pub retention: Option<Retention>,
    pub per_task: Vec<TaskRow>,
}

/// Table-style summary of one run. `mean_sr` averages post-training SR over
/// all visits.
pub fn summarize_run(log: &RunLog, thresholds: &BTreeMap<String, f64>) -> Result<MetricsReport> {
    if log.visits.is_empty() {
        return Err(Error::Empty("run log has no visits".into()));
    }
    let mut per_task = Vec::with_capacity(log.visits.len());
    for v in &log.visits {
        let tau = tau_for(thresholds, &v.base_tag)?;
        per_task.push(TaskRow {
            tag: v.tag.clone(),
            tau,
            sr_post: v.sr_post,
            sr_end: v.sr_end,
            ttt: ttt(&v.curve, tau, v.budget),
        });
    }
    let n = per_task.len() as f64;
    let revisits: Vec<f64> = log
        .visits
        .iter()
        .zip(&per_task)
        .filter(|(v, _)| v.is_revisit())
        .map(|(_, r)| r.ttt as f64)
        .collect();
    Ok(MetricsReport {
        mean_sr: per_task.iter().map(|r| r.sr_post).sum::<f64>() / n,
        ttt: per_task.iter().map(|r| r.ttt as f64).sum::<f64>() / n,
        ttt_revisit: (!revisits.is_empty()).then(|| revisits.iter().sum::<f64>() / revisits.len() as f64),
        retention: if log.visits.len() >= 2 {
            Some(retention_metrics(log, thresholds)?)
        } else {
            None
        },
        per_task,
    })
}

/// Mean and normal-approximation 95% half-width (sample standard
/// deviation); the half-width is absent for a single value.
pub fn mean_ci(xs: &[f64]) -> Option<(f64, Option<f64>)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, None));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, Some(1.96 * var.sqrt() / n.sqrt())))
}
