//! Illumination around a trained base policy.

use serde::{Deserialize, Serialize};

use super::{mutate, select_parent, Elite, InjectionPool, InsertOutcome, UnstructuredArchive};
use crate::agent::PolicyParams;
use crate::embedder::EmbeddingState;
use crate::gridworld::{evaluate_policy, EpisodeSet, TaskSpec};
use crate::rng::{derive, derive_idx, stream};
use crate::runner::base_tag;
use crate::transfer::{record_lineage, LineageRecord};
use crate::{Error, Result};

/// Episodes kept per elite for later re-embedding.
pub const SKETCH_EPISODES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlluminateConfig {
    pub iterations: usize,
    pub eval_episodes: usize,
    pub sigma0: f64,
    pub d_min0: f64,
    pub target: usize,
    pub capacity: usize,
    pub p_inj: f64,
    pub gate_floor: f64,
    pub gate_ratio: f64,
    /// Missing-sketch fraction above which re-embedding re-evaluates.
    pub reeval_fraction: f64,
}

impl Default for IlluminateConfig {
    fn default() -> Self {
        IlluminateConfig {
            iterations: 300,
            eval_episodes: 10,
            sigma0: 0.05,
            d_min0: 0.1,
            target: 256,
            capacity: 384,
            p_inj: 0.0,
            gate_floor: 0.05,
            gate_ratio: 0.5,
            reeval_fraction: 0.25,
        }
    }
}

impl IlluminateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_episodes == 0 {
            return Err(Error::Config("illumination needs at least one evaluation episode".into()));
        }
        if self.target == 0 || self.capacity < self.target {
            return Err(Error::Config(format!(
                "archive capacity {} must be at least the target size {} (> 0)",
                self.capacity, self.target
            )));
        }
        if !(self.d_min0 > 0.0) || !(1e-3..=1.0).contains(&self.sigma0) {
            return Err(Error::Config("d_min0 must be positive and sigma0 within [1e-3, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.p_inj) {
            return Err(Error::Config(format!("p_inj {} outside [0, 1]", self.p_inj)));
        }
        Ok(())
    }

    pub fn gate(&self, base_sr: f64) -> f64 {
        self.gate_floor.max(self.gate_ratio * base_sr)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IlluminationStats {
    pub iterations: usize,
    pub inserted: usize,
    pub replaced: usize,
    pub rejected: usize,
    pub gated: usize,
    pub injected_parents: usize,
    pub gate: f64,
    pub base_sr: f64,
    pub base_fitness: f64,
    pub final_size: usize,
    pub final_dmin: f64,
    pub env_steps: usize,
    pub max_size: usize,
}

/// First `SKETCH_EPISODES` episodes of an evaluation, and whether any were
/// dropped.
pub fn make_sketch(set: &EpisodeSet) -> (EpisodeSet, bool) {
    let k = set.episodes.len().min(SKETCH_EPISODES);
    let sketch = EpisodeSet::new(set.tag.clone(), set.episodes[..k].to_vec());
    (sketch, k < set.episodes.len())
}

/// Build (or refresh) the archive for `tag` around `base`. The base policy is
/// borrowed and never modified.
#[allow(clippy::too_many_arguments)]
pub fn illuminate(
    spec: &TaskSpec,
    tag: &str,
    base: &PolicyParams,
    base_lineage: &LineageRecord,
    state: &EmbeddingState,
    cfg: &IlluminateConfig,
    pool: Option<&InjectionPool>,
    initial: Option<UnstructuredArchive>,
    seed: u64,
) -> Result<(UnstructuredArchive, IlluminationStats)> {
    cfg.validate()?;
    let btag = base_tag(tag)?;
    let m = cfg.eval_episodes;
    let mut stats = IlluminationStats::default();

    let mut archive = match initial {
        Some(a) => {
            if a.embedding_version != state.version {
                return Err(Error::StaleDescriptor {
                    elite: a.embedding_version,
                    archive: state.version,
                });
            }
            if a.base_tag != btag {
                return Err(Error::Config(format!("initial archive belongs to {}, not {btag}", a.base_tag)));
            }
            a
        }
        None => UnstructuredArchive::new(btag.clone(), cfg.d_min0, cfg.target, cfg.capacity, state.version),
    };
    archive.spec = Some(*spec);
    archive.eval_episodes = m;

    let base_eval = evaluate_policy(base, spec, m, derive(seed, "illuminate-base"), &btag)?;
    stats.env_steps += base_eval.env_steps();
    let (sketch, sub) = make_sketch(&base_eval.set);
    let descriptor = state.descriptor(&base_eval.set)?.to_vec();
    archive.z_ref = descriptor.clone();
    archive.reference = Some(sketch.clone());
    let base_elite = Elite {
        id: archive.fresh_id(),
        params: base.clone(),
        fitness: base_eval.mean_reward,
        sr: base_eval.sr,
        descriptor,
        sigma: cfg.sigma0,
        sketch: Some(sketch),
        sketch_subsampled: sub,
        lineage: record_lineage(base_lineage, &btag)?,
        source_tag: btag.clone(),
        embedding_version: state.version,
    };
    if archive.try_insert(base_elite)?.changed() {
        archive.adapt_dmin();
    }
    stats.base_sr = base_eval.sr;
    stats.base_fitness = base_eval.mean_reward;
    let gate = cfg.gate(base_eval.sr);
    stats.gate = gate;
    stats.max_size = archive.len();

    let mut rng = stream(seed, "illuminate");
    for it in 0..cfg.iterations {
        let (parent, injected) = select_parent(&archive, pool, cfg.p_inj, &mut rng)?;
        let (params, sigma) = mutate(parent, &mut rng);
        let lineage = record_lineage(&parent.lineage, &btag)?;
        stats.injected_parents += injected as usize;
        stats.iterations += 1;

        let ev = evaluate_policy(&params, spec, m, derive_idx(seed, "illuminate-eval", it as u64), &btag)?;
        stats.env_steps += ev.env_steps();
        if ev.sr < gate {
            stats.gated += 1;
            continue;
        }
        let descriptor = state.descriptor(&ev.set)?.to_vec();
        let (sketch, sub) = make_sketch(&ev.set);
        let child = Elite {
            id: archive.fresh_id(),
            params,
            fitness: ev.mean_reward,
            sr: ev.sr,
            descriptor,
            sigma,
            sketch: Some(sketch),
            sketch_subsampled: sub,
            lineage,
            source_tag: btag.clone(),
            embedding_version: state.version,
        };
        match archive.try_insert(child)? {
            InsertOutcome::Inserted => stats.inserted += 1,
            InsertOutcome::Replaced(_) => stats.replaced += 1,
            InsertOutcome::Rejected => {
                stats.rejected += 1;
                continue;
            }
        }
        archive.adapt_dmin();
        stats.max_size = stats.max_size.max(archive.len());
    }
    stats.final_size = archive.len();
    stats.final_dmin = archive.d_min;
    Ok((archive, stats))
}
