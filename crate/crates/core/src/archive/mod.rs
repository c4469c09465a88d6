//! Unstructured MAP-Elites container: elites are kept while they stay at
//! least `d_min` apart in descriptor space, with the spacing adapted towards
//! a target occupancy.

mod illuminate;
mod snapshot;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use illuminate::{illuminate, make_sketch, IlluminateConfig, IlluminationStats, SKETCH_EPISODES};
pub use snapshot::{load_snapshot, save_snapshot, ArchiveManifest, EliteEntry};

use crate::agent::PolicyParams;
use crate::embedder::EmbeddingState;
use crate::gridworld::{evaluate_policy, EpisodeSet, TaskSpec};
use crate::rng::{derive_idx, Rng};
use crate::transfer::LineageRecord;
use crate::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1.0;
pub const DMIN_MIN: f64 = 1e-4;
pub const DMIN_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub id: u64,
    pub params: PolicyParams,
    /// Mean evaluation return.
    pub fitness: f64,
    pub sr: f64,
    pub descriptor: Vec<f64>,
    pub sigma: f64,
    /// Bounded subset of the evaluation episodes, used for re-embedding.
    pub sketch: Option<EpisodeSet>,
    /// The sketch holds fewer episodes than the evaluation that set `fitness`.
    pub sketch_subsampled: bool,
    pub lineage: LineageRecord,
    /// Archive the elite was created in (or imported from).
    pub source_tag: String,
    pub embedding_version: u64,
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertOutcome {
    Inserted,
    /// Elites removed to make room for the candidate.
    Replaced(Vec<Elite>),
    Rejected,
}

impl InsertOutcome {
    pub fn changed(&self) -> bool {
        !matches!(self, InsertOutcome::Rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstructuredArchive {
    pub elites: Vec<Elite>,
    pub d_min: f64,
    pub target: usize,
    pub capacity: usize,
    pub z_ref: Vec<f64>,
    /// Sketch of the reference (base) policy, used to refresh `z_ref`.
    pub reference: Option<EpisodeSet>,
    pub base_tag: String,
    pub embedding_version: u64,
    /// Native task, used to rebuild missing sketches.
    pub spec: Option<TaskSpec>,
    pub eval_episodes: usize,
    pub next_id: u64,
}

impl UnstructuredArchive {
    pub fn new(base_tag: impl Into<String>, d_min: f64, target: usize, capacity: usize, embedding_version: u64) -> Self {
        UnstructuredArchive {
            elites: Vec::new(),
            d_min,
            target,
            capacity,
            z_ref: Vec::new(),
            reference: None,
            base_tag: base_tag.into(),
            embedding_version,
            spec: None,
            eval_episodes: 10,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.elites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elites.is_empty()
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn best(&self) -> Option<&Elite> {
        self.elites.iter().max_by(|a, b| a.fitness.total_cmp(&b.fitness).then(b.id.cmp(&a.id)))
    }

    /// Distance from `z` to the closest stored elite.
    pub fn nearest_distance(&self, z: &[f64]) -> Option<f64> {
        self.elites.iter().map(|e| distance(&e.descriptor, z)).min_by(f64::total_cmp)
    }

    /// Number of pairs closer than `d_min`.
    pub fn spacing_violations(&self) -> usize {
        let mut n = 0;
        for i in 0..self.elites.len() {
            for j in i + 1..self.elites.len() {
                if distance(&self.elites[i].descriptor, &self.elites[j].descriptor) < self.d_min {
                    n += 1;
                }
            }
        }
        n
    }

    /// Insert-if-far, replace-if-better. A candidate that lands within
    /// `d_min` of existing elites replaces all of them, and only when it is
    /// fitter than each; at capacity the least fit elite is evicted.
    pub fn try_insert(&mut self, e: Elite) -> Result<InsertOutcome> {
        if e.embedding_version != self.embedding_version {
            return Err(Error::StaleDescriptor {
                elite: e.embedding_version,
                archive: self.embedding_version,
            });
        }
        if !e.descriptor.iter().all(|v| v.is_finite()) {
            return Ok(InsertOutcome::Rejected);
        }
        let close: Vec<usize> = (0..self.elites.len())
            .filter(|&i| distance(&self.elites[i].descriptor, &e.descriptor) < self.d_min)
            .collect();
        if close.is_empty() {
            if self.elites.len() < self.capacity {
                self.elites.push(e);
                return Ok(InsertOutcome::Inserted);
            }
            let worst = (0..self.elites.len())
                .min_by(|&a, &b| self.elites[a].fitness.total_cmp(&self.elites[b].fitness))
                .expect("archive at capacity is non-empty");
            if e.fitness > self.elites[worst].fitness {
                let old = std::mem::replace(&mut self.elites[worst], e);
                return Ok(InsertOutcome::Replaced(vec![old]));
            }
            return Ok(InsertOutcome::Rejected);
        }
        if close.iter().all(|&i| e.fitness > self.elites[i].fitness) {
            let mut removed = Vec::with_capacity(close.len());
            for &i in close.iter().rev() {
                removed.push(self.elites.remove(i));
            }
            removed.reverse();
            self.elites.push(e);
            return Ok(InsertOutcome::Replaced(removed));
        }
        Ok(InsertOutcome::Rejected)
    }

    /// Multiplicative spacing control towards the target size.
    pub fn adapt_dmin(&mut self) {
        let n = self.elites.len() as f64;
        if self.elites.len() > self.target {
            self.d_min *= 1.05;
        } else if n < 0.9 * self.target as f64 {
            self.d_min *= 0.99;
        }
        self.d_min = self.d_min.clamp(DMIN_MIN, DMIN_MAX);
    }

    /// Greedy filter in descending fitness (ties by id); keeps an elite only
    /// if it is at least `d_min` from every kept elite, up to capacity.
    pub fn repack(&mut self) {
        let mut order: Vec<Elite> = std::mem::take(&mut self.elites);
        order.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.id.cmp(&b.id)));
        let mut kept: Vec<Elite> = Vec::with_capacity(order.len());
        for e in order {
            if kept.len() >= self.capacity {
                break;
            }
            if kept.iter().all(|k| distance(&k.descriptor, &e.descriptor) >= self.d_min) {
                kept.push(e);
            }
        }
        kept.sort_by_key(|e| e.id);
        self.elites = kept;
    }

    /// Recompute descriptors from sketches under `state`. Elites without a
    /// sketch are re-evaluated on the native task when more than
    /// `reeval_fraction` of the archive lacks one, otherwise dropped.
    pub fn reembed(&mut self, state: &EmbeddingState, reeval_fraction: f64, seed: u64) -> Result<ReembedStats> {
        if state.version < self.embedding_version {
            return Err(Error::StaleDescriptor {
                elite: state.version,
                archive: self.embedding_version,
            });
        }
        let missing = self.elites.iter().filter(|e| e.sketch.is_none()).count();
        let mut stats = ReembedStats::default();
        let reeval = !self.elites.is_empty() && missing as f64 > reeval_fraction * self.elites.len() as f64;
        if missing > 0 && !reeval {
            self.elites.retain(|e| e.sketch.is_some());
            stats.dropped = missing;
        }
        let m = self.eval_episodes.max(1);
        for e in self.elites.iter_mut() {
            if e.sketch.is_none() {
                let spec = self
                    .spec
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("archive {} has no native task to re-evaluate on", self.base_tag)))?;
                let ev = evaluate_policy(&e.params, spec, m, derive_idx(seed, "reeval", e.id), &self.base_tag)?;
                let (sketch, sub) = make_sketch(&ev.set);
                e.fitness = ev.mean_reward;
                e.sr = ev.sr;
                e.sketch = Some(sketch);
                e.sketch_subsampled = sub;
                stats.reevaluated += 1;
                stats.env_steps += ev.env_steps();
            }
            let sketch = e.sketch.as_ref().expect("sketch present");
            e.descriptor = state.descriptor(sketch)?.to_vec();
            e.embedding_version = state.version;
            stats.reembedded += 1;
        }
        if let Some(r) = &self.reference {
            self.z_ref = state.descriptor(r)?.to_vec();
        }
        self.embedding_version = state.version;
        Ok(stats)
    }

    /// All elites, provided their descriptors are at `version`.
    pub fn elites_at_version(&self, version: u64) -> Result<&[Elite]> {
        if self.embedding_version != version {
            return Err(Error::StaleDescriptor {
                elite: self.embedding_version,
                archive: version,
            });
        }
        Ok(&self.elites)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReembedStats {
    pub reembedded: usize,
    pub reevaluated: usize,
    pub dropped: usize,
    /// Environment steps spent rebuilding missing sketches.
    pub env_steps: usize,
}

/// Elites borrowed from other archives for parent injection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InjectionPool {
    pub candidates: Vec<Elite>,
    pub lambda: f64,
}

impl InjectionPool {
    pub fn new(candidates: Vec<Elite>) -> Self {
        InjectionPool { candidates, lambda: 0.5 }
    }
}

pub const INJECTION_SUBSET: usize = 16;

/// `min distance to archive + λ · min-max normalised fitness` within the
/// given candidate subset.
pub fn injection_scores(archive: &UnstructuredArchive, candidates: &[&Elite], lambda: f64) -> Vec<f64> {
    let lo = candidates.iter().map(|c| c.fitness).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|c| c.fitness).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .iter()
        .map(|c| {
            let d = archive.nearest_distance(&c.descriptor).unwrap_or(0.0);
            let f = if hi > lo { (c.fitness - lo) / (hi - lo) } else { 0.0 };
            d + lambda * f
        })
        .collect()
}

/// Parent for the next offspring; `true` in the second slot marks an
/// injected parent.
pub fn select_parent<'a>(
    archive: &'a UnstructuredArchive,
    pool: Option<&'a InjectionPool>,
    p_inj: f64,
    rng: &mut Rng,
) -> Result<(&'a Elite, bool)> {
    if archive.is_empty() {
        return Err(Error::Empty("cannot select a parent from an empty archive".into()));
    }
    if let Some(pool) = pool.filter(|p| p_inj > 0.0 && !p.candidates.is_empty()) {
        if rng.random::<f64>() < p_inj {
            let k = INJECTION_SUBSET.min(pool.candidates.len());
            let idx = sample(rng, pool.candidates.len(), k).into_vec();
            let subset: Vec<&Elite> = idx.iter().map(|&i| &pool.candidates[i]).collect();
            let scores = injection_scores(archive, &subset, pool.lambda);
            let mut best = 0;
            for i in 1..scores.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            return Ok((subset[best], true));
        }
    }
    let i = rng.random_range(0..archive.len());
    Ok((&archive.elites[i], false))
}

/// Log-normal self-adaptation of σ followed by isotropic Gaussian noise.
pub fn mutate(parent: &Elite, rng: &mut Rng) -> (PolicyParams, f64) {
    let n: f64 = StandardNormal.sample(rng);
    let sigma = (parent.sigma * (0.2 * n).exp()).clamp(SIGMA_MIN, SIGMA_MAX);
    let data = parent
        .params
        .data
        .iter()
        .map(|p| {
            let e: f64 = StandardNormal.sample(rng);
            p + sigma * e
        })
        .collect();
    (PolicyParams { data }, sigma)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::rng_from;

    pub(crate) fn toy_elite(id: u64, z: &[f64], fitness: f64) -> Elite {
        Elite {
            id,
            params: PolicyParams { data: vec![0.0; 4] },
            fitness,
            sr: fitness.clamp(0.0, 1.0),
            descriptor: z.to_vec(),
            sigma: 0.05,
            sketch: None,
            sketch_subsampled: false,
            lineage: LineageRecord::new(),
            source_tag: "A".into(),
            embedding_version: 0,
        }
    }

    fn archive() -> UnstructuredArchive {
        UnstructuredArchive::new("A", 0.1, 256, 384, 0)
    }

    #[test]
    fn insert_rules() {
        let mut a = archive();
        assert_eq!(a.try_insert(toy_elite(0, &[0.0, 0.0], 0.5)).unwrap(), InsertOutcome::Inserted);
        a.try_insert(toy_elite(1, &[1.0, 0.0], 0.9)).unwrap();
        let out = a.try_insert(toy_elite(2, &[0.05, 0.0], 0.6)).unwrap();
        assert!(matches!(&out, InsertOutcome::Replaced(old) if old.len() == 1 && old[0].id == 0));
        assert_eq!(a.try_insert(toy_elite(3, &[0.0, 0.05], 0.4)).unwrap(), InsertOutcome::Rejected);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn stale_descriptor_rejected() {
        let mut a = archive();
        let mut e = toy_elite(0, &[0.0], 0.1);
        e.embedding_version = 3;
        assert!(matches!(a.try_insert(e), Err(Error::StaleDescriptor { .. })));
    }

    #[test]
    fn capacity_evicts_least_fit() {
        let mut a = UnstructuredArchive::new("A", 0.1, 2, 3, 0);
        for i in 0..3 {
            a.try_insert(toy_elite(i, &[i as f64], 0.2 + 0.1 * i as f64)).unwrap();
        }
        assert_eq!(a.try_insert(toy_elite(9, &[10.0], 0.1)).unwrap(), InsertOutcome::Rejected);
        let out = a.try_insert(toy_elite(10, &[11.0], 0.9)).unwrap();
        assert!(matches!(&out, InsertOutcome::Replaced(old) if old[0].id == 0));
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn dmin_control() {
        let mut a = UnstructuredArchive::new("A", 0.1, 2, 3, 0);
        a.try_insert(toy_elite(0, &[0.0], 0.1)).unwrap();
        a.try_insert(toy_elite(1, &[1.0], 0.1)).unwrap();
        a.adapt_dmin();
        assert_eq!(a.d_min, 0.1);
        a.try_insert(toy_elite(2, &[2.0], 0.1)).unwrap();
        a.adapt_dmin();
        assert!((a.d_min - 0.105).abs() < 1e-15);
        a.d_min = 10.0;
        a.adapt_dmin();
        assert_eq!(a.d_min, 10.0);
    }

    #[test]
    fn repack_keeps_fitter_of_close_pair() {
        let mut a = archive();
        a.elites.push(toy_elite(0, &[0.0], 0.6));
        a.elites.push(toy_elite(1, &[0.05], 0.7));
        a.elites.push(toy_elite(2, &[1.0], 0.1));
        a.repack();
        let ids: Vec<u64> = a.elites.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![1, 2]);
        let once = a.clone();
        a.repack();
        assert_eq!(a, once);
    }

    #[test]
    fn injection_score_values() {
        let mut a = archive();
        a.elites.push(toy_elite(0, &[0.0, 0.0], 0.5));
        let c1 = toy_elite(10, &[0.9, 0.0], 0.0);
        let c2 = toy_elite(11, &[0.0, 0.0], 1.0);
        let s = injection_scores(&a, &[&c1, &c2], 0.5);
        assert!((s[0] - 0.9).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15);
        let pool = InjectionPool::new(vec![c1.clone(), c2]);
        let (chosen, injected) = select_parent(&a, Some(&pool), 1.0, &mut rng_from(0)).unwrap();
        assert!(injected);
        assert_eq!(chosen.id, 10);
        let (chosen, injected) = select_parent(&a, Some(&pool), 0.0, &mut rng_from(0)).unwrap();
        assert!(!injected && chosen.id == 0);
        // p_inj > 0 but nothing to inject
        let empty = InjectionPool::new(vec![]);
        assert!(!select_parent(&a, Some(&empty), 1.0, &mut rng_from(0)).unwrap().1);
    }

    #[test]
    fn mutation_scale_is_clamped_and_deterministic() {
        let mut parent = toy_elite(0, &[0.0], 0.5);
        parent.sigma = 1.0;
        for s in 0..200 {
            let (_, sigma) = mutate(&parent, &mut rng_from(s));
            assert!((SIGMA_MIN..=SIGMA_MAX).contains(&sigma));
        }
        assert_eq!(mutate(&parent, &mut rng_from(5)), mutate(&parent, &mut rng_from(5)));
    }
}
