//! Archive-based initialisation for a new task: diversity-aware pooling of
//! prior elites and few-shot origin selection by short PPO probes.

mod lineage;

use serde::{Deserialize, Serialize};

pub use lineage::{record_lineage, LineageRecord};

use crate::agent::{train_task, PPOConfig, TrainContext};
use crate::archive::{distance, Elite, UnstructuredArchive};
use crate::gridworld::TaskSpec;
use crate::rng::derive_idx;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub k_pool: usize,
    pub zero_shot_episodes: usize,
    pub probe_budget: usize,
    pub probe_eval_every: usize,
    pub margin: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_pool: 8,
            zero_shot_episodes: 20,
            probe_budget: 20_000,
            probe_eval_every: 4_000,
            margin: 0.05,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_pool == 0 {
            return Err(Error::Config("K_pool must be at least 1".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("selection margin must be non-negative".into()));
        }
        if self.zero_shot_episodes == 0 || self.probe_eval_every == 0 {
            return Err(Error::Config("probe evaluation cadence and episodes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub candidate_id: u64,
    pub source_tag: String,
    pub lineage: LineageRecord,
    pub zero_shot_sr: f64,
    pub trace: Vec<(usize, f64)>,
    pub final_sr: f64,
    pub recoverability: f64,
    pub chosen: bool,
    /// PPO steps plus checkpoint evaluation steps spent on this probe.
    pub env_steps: usize,
}

/// Greedy farthest-point down-selection over the union of `archives`,
/// seeded with the fittest elite.
pub fn pool_candidates(archives: &[&UnstructuredArchive], k_pool: usize, version: u64) -> Result<Vec<Elite>> {
    let mut union: Vec<(&str, &Elite)> = Vec::new();
    for a in archives {
        for e in a.elites_at_version(version)? {
            union.push((a.base_tag.as_str(), e));
        }
    }
    if union.is_empty() {
        return Err(Error::Empty("no archived elites to pool from".into()));
    }
    // fitness descending, then archive tag, then id
    let better = |a: &(&str, &Elite), b: &(&str, &Elite)| {
        b.1.fitness.total_cmp(&a.1.fitness).then(a.0.cmp(b.0)).then(a.1.id.cmp(&b.1.id))
    };
    let seed = (0..union.len()).min_by(|&i, &j| better(&union[i], &union[j])).expect("non-empty");
    let mut chosen = vec![seed];
    let mut min_d: Vec<f64> = union.iter().map(|c| distance(&c.1.descriptor, &union[seed].1.descriptor)).collect();
    while chosen.len() < k_pool.min(union.len()) {
        let mut best: Option<usize> = None;
        for i in 0..union.len() {
            if chosen.contains(&i) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let ord = min_d[b].total_cmp(&min_d[i]).then_with(|| better(&union[i], &union[b]));
                    if ord == std::cmp::Ordering::Less {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let b = best.expect("candidates remain");
        chosen.push(b);
        for i in 0..union.len() {
            min_d[i] = min_d[i].min(distance(&union[i].1.descriptor, &union[b].1.descriptor));
        }
    }
    Ok(chosen.into_iter().map(|i| union[i].1.clone()).collect())
}

/// Two-stage rule: keep candidates within `margin` of the best final SR,
/// then take the highest recoverability, then the higher final SR, then
/// the earliest in the list.
pub fn select_by_rule(finals: &[f64], recoverability: &[f64], margin: f64) -> Option<usize> {
    let max_final = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for i in 0..finals.len() {
        if finals[i] < max_final - margin {
            continue;
        }
        best = match best {
            Some(b) if (recoverability[i], finals[i]) <= (recoverability[b], finals[b]) => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// SR gain from zero-shot to the last checkpoint in the first half of the
/// probe.
pub fn recoverability(trace: &[(usize, f64)], probe_budget: usize) -> f64 {
    let zero = trace.first().map_or(0.0, |c| c.1);
    let mid = trace
        .iter()
        .rfind(|c| c.0 <= probe_budget / 2)
        .map_or(zero, |c| c.1);
    mid - zero
}

/// Probe every candidate on the target task with a fresh optimiser and pick
/// the transfer origin.
pub fn few_shot_select(
    pool: &[Elite],
    spec: &TaskSpec,
    tag: &str,
    ppo: &PPOConfig,
    cfg: &SelectionConfig,
    seed: u64,
) -> Result<(Elite, Vec<ProbeResult>)> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("few-shot selection over an empty pool".into()));
    }
    let probe_cfg = PPOConfig {
        budget: cfg.probe_budget,
        eval_every: cfg.probe_eval_every,
        eval_episodes: cfg.zero_shot_episodes,
        stop_at_sr: None,
        ..ppo.clone()
    };
    let mut results = Vec::with_capacity(pool.len());
    for (i, cand) in pool.iter().enumerate() {
        let mut opt = cand.params.optimizer(probe_cfg.lr);
        let ctx = TrainContext::new(derive_idx(seed, "probe", i as u64), tag);
        let out = train_task(spec, &cand.params, &mut opt, &probe_cfg, ctx)?;
        let trace = out.trace.curve();
        results.push(ProbeResult {
            candidate_id: cand.id,
            source_tag: cand.source_tag.clone(),
            lineage: cand.lineage.clone(),
            zero_shot_sr: out.trace.zero_shot_sr(),
            final_sr: out.trace.final_sr(),
            recoverability: recoverability(&trace, cfg.probe_budget),
            trace,
            chosen: false,
            env_steps: out.trace.env_steps + out.trace.eval_steps,
        });
    }
    let finals: Vec<f64> = results.iter().map(|r| r.final_sr).collect();
    let recs: Vec<f64> = results.iter().map(|r| r.recoverability).collect();
    let pick = select_by_rule(&finals, &recs, cfg.margin).expect("non-empty pool");
    results[pick].chosen = true;
    Ok((pool[pick].clone(), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::tests::toy_elite;

    fn archive_of(tag: &str, elites: Vec<Elite>) -> UnstructuredArchive {
        let mut a = UnstructuredArchive::new(tag, 0.01, 256, 384, 0);
        a.elites = elites;
        a
    }

    #[test]
    fn selection_rule_examples() {
        assert_eq!(select_by_rule(&[0.9, 0.88, 0.6], &[0.1, 0.3, 0.9], 0.05), Some(1));
        assert_eq!(select_by_rule(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 0.05), Some(0));
        assert_eq!(select_by_rule(&[0.3], &[-1.0], 0.05), Some(0));
        assert_eq!(select_by_rule(&[0.5, 0.52], &[0.2, 0.2], 0.05), Some(1));
    }

    #[test]
    fn farthest_point_avoids_midpoint() {
        let a = archive_of(
            "A",
            vec![toy_elite(0, &[0.0], 1.0), toy_elite(1, &[0.5], 1.0), toy_elite(2, &[1.0], 1.0)],
        );
        let got = pool_candidates(&[&a], 2, 0).unwrap();
        let ids: Vec<u64> = got.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 2]);
        assert_eq!(pool_candidates(&[&a], 8, 0).unwrap().len(), 3);
    }

    #[test]
    fn duplicates_come_last() {
        let a = archive_of(
            "A",
            vec![toy_elite(0, &[0.0], 1.0), toy_elite(1, &[0.0], 0.9), toy_elite(2, &[0.3], 0.1)],
        );
        let ids: Vec<u64> = pool_candidates(&[&a], 3, 0).unwrap().iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 2, 1]);
    }

    #[test]
    fn ties_prefer_fitness_then_tag() {
        let a = archive_of("B", vec![toy_elite(0, &[0.0], 1.0), toy_elite(1, &[1.0], 0.5)]);
        let b = archive_of("A", vec![toy_elite(0, &[-1.0], 0.5)]);
        let got = pool_candidates(&[&a, &b], 2, 0).unwrap();
        assert_eq!(got[1].descriptor, vec![-1.0]);
        assert!(pool_candidates(&[&archive_of("A", vec![])], 2, 0).is_err());
    }

    #[test]
    fn recoverability_uses_first_half() {
        let t = [(0, 0.1), (4096, 0.3), (8192, 0.5), (12288, 0.9), (20000, 1.0)];
        assert!((recoverability(&t, 20_000) - 0.4).abs() < 1e-15);
    }
}
