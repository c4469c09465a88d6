//! Between-task upkeep of the shared latent space: episode-set banks,
//! encoder boundary training, normaliser refit and archive re-embedding.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::archive::{save_snapshot, UnstructuredArchive};
use crate::embedder::{boundary_train, fit_normalizer, BoundaryConfig, EmbeddingState};
use crate::gridworld::EpisodeSet;
use crate::rng::{derive_idx, rng_from, stream};
use crate::{Error, Result};

pub const ANCHOR_CAPACITY: usize = 512;
pub const REPLAY_CAPACITY: usize = 2048;
pub const ANCHOR_SR: f64 = 0.5;

/// Episode set with a bank-wide sequence number, so a set admitted to both
/// banks is counted once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSet {
    pub id: u64,
    pub set: EpisodeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Banks {
    pub anchors: VecDeque<StoredSet>,
    pub replay: Vec<StoredSet>,
    pub anchor_capacity: usize,
    pub replay_capacity: usize,
    /// Sets ever offered to the replay reservoir.
    pub seen: u64,
    pub seed: u64,
}

impl Banks {
    pub fn new(seed: u64) -> Self {
        Self::with_capacity(seed, ANCHOR_CAPACITY, REPLAY_CAPACITY)
    }

    pub fn with_capacity(seed: u64, anchor_capacity: usize, replay_capacity: usize) -> Self {
        Banks {
            anchors: VecDeque::new(),
            replay: Vec::new(),
            anchor_capacity,
            replay_capacity,
            seen: 0,
            seed,
        }
    }

    /// Number of distinct sets across both banks.
    pub fn union_len(&self) -> usize {
        self.union_ids().len()
    }

    fn union_ids(&self) -> BTreeSet<u64> {
        self.anchors.iter().chain(&self.replay).map(|s| s.id).collect()
    }

    pub fn anchor_sets(&self) -> Vec<EpisodeSet> {
        self.anchors.iter().map(|s| s.set.clone()).collect()
    }

    pub fn replay_sets(&self) -> Vec<EpisodeSet> {
        self.replay.iter().map(|s| s.set.clone()).collect()
    }
}

/// Always offer `set` to the replay reservoir; also admit it as an anchor
/// when its success rate reaches the threshold. Empty sets are ignored.
pub fn store_episode_set(banks: &mut Banks, set: &EpisodeSet) {
    if set.episodes.is_empty() {
        return;
    }
    let id = banks.seen;
    banks.seen += 1;
    let stored = StoredSet { id, set: set.clone() };
    if set.mean_sr >= ANCHOR_SR && banks.anchor_capacity > 0 {
        if banks.anchors.len() == banks.anchor_capacity {
            banks.anchors.pop_front();
        }
        banks.anchors.push_back(stored.clone());
    }
    if banks.replay.len() < banks.replay_capacity {
        banks.replay.push(stored);
    } else if banks.replay_capacity > 0 {
        let j = rng_from(derive_idx(banks.seed, "reservoir", id)).random_range(0..=id);
        if (j as usize) < banks.replay_capacity {
            banks.replay[j as usize] = stored;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenanceConfig {
    pub min_bank_sets: usize,
    pub refit_bank_size: usize,
    pub refit_anchor_fraction: f64,
    pub reeval_fraction: f64,
    pub boundary: BoundaryConfig,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        MaintenanceConfig {
            min_bank_sets: 32,
            refit_bank_size: 256,
            refit_anchor_fraction: 0.33,
            reeval_fraction: 0.25,
            boundary: BoundaryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    pub performed: bool,
    pub new_version: u64,
    pub drift_l2: Option<f64>,
    pub drift_cos: Option<f64>,
    pub reembedded_archives: usize,
    pub reevaluated_elites: usize,
    pub dropped_elites: usize,
    pub reeval_env_steps: usize,
    pub bank_sets: usize,
    pub refit_sets: usize,
    pub final_loss: Option<f64>,
}

/// Mean L2 distance and mean cosine similarity between paired vectors.
pub fn drift_metrics(old: &[Vec<f64>], new: &[Vec<f64>]) -> Result<(f64, f64)> {
    if old.len() != new.len() {
        return Err(Error::shape(old.len(), new.len()));
    }
    if old.is_empty() {
        return Err(Error::Empty("drift needs at least one descriptor pair".into()));
    }
    let mut l2 = 0.0;
    let mut cos = 0.0;
    for (a, b) in old.iter().zip(new) {
        if a.len() != b.len() {
            return Err(Error::shape(a.len(), b.len()));
        }
        let mut d = 0.0;
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (x, y) in a.iter().zip(b) {
            d += (x - y) * (x - y);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        l2 += d.sqrt();
        cos += if na == 0.0 && nb == 0.0 {
            1.0
        } else if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na.sqrt() * nb.sqrt())
        };
    }
    let n = old.len() as f64;
    Ok((l2 / n, cos / n))
}

/// Normaliser refit bank: `round(fraction · n)` anchors (as available), the
/// rest drawn from the remaining distinct sets, `n = min(size, union)`.
pub fn refit_bank(banks: &Banks, size: usize, anchor_fraction: f64, seed: u64) -> Vec<EpisodeSet> {
    let n = size.min(banks.union_len());
    let mut rng = stream(seed, "refit-bank");
    let want_anchor = ((anchor_fraction * n as f64).round() as usize).min(banks.anchors.len());
    let mut ids = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    for i in sample(&mut rng, banks.anchors.len(), want_anchor).into_vec() {
        ids.insert(banks.anchors[i].id);
        out.push(banks.anchors[i].set.clone());
    }
    let mut rest: Vec<&StoredSet> = Vec::new();
    for s in banks.replay.iter().chain(&banks.anchors) {
        if ids.insert(s.id) {
            rest.push(s);
        }
    }
    let k = (n - out.len()).min(rest.len());
    for i in sample(&mut rng, rest.len(), k).into_vec() {
        out.push(rest[i].set.clone());
    }
    out
}

/// Run one boundary maintenance pass. Below the bank threshold nothing is
/// touched and the returned state equals the input. Stale snapshots are
/// written to `<snapshot_root>/<tag>/stale-v<old>.json` before re-embedding.
pub fn boundary_maintenance(
    state: &EmbeddingState,
    banks: &Banks,
    archives: &mut [UnstructuredArchive],
    cfg: &MaintenanceConfig,
    seed: u64,
    snapshot_root: Option<&Path>,
) -> Result<(EmbeddingState, MaintenanceReport)> {
    let mut report = MaintenanceReport {
        new_version: state.version,
        bank_sets: banks.union_len(),
        ..MaintenanceReport::default()
    };
    if report.bank_sets < cfg.min_bank_sets.max(2) {
        return Ok((state.clone(), report));
    }
    let anchors = banks.anchor_sets();
    let replay = banks.replay_sets();
    let outcome = boundary_train(state, &anchors, &replay, &cfg.boundary, &mut stream(seed, "boundary-train"))?;
    report.final_loss = outcome.losses.last().copied();

    let bank = refit_bank(banks, cfg.refit_bank_size, cfg.refit_anchor_fraction, seed);
    report.refit_sets = bank.len();
    let normalizer = fit_normalizer(&outcome.encoder, &bank, state.normalizer.as_ref())?;
    let next = EmbeddingState {
        encoder: outcome.encoder,
        normalizer: Some(normalizer),
        version: state.version + 1,
    };

    for (i, a) in archives.iter_mut().enumerate() {
        if let Some(root) = snapshot_root {
            save_snapshot(a, &root.join(&a.base_tag), &format!("stale-v{}", a.embedding_version))?;
        }
        let st = a.reembed(&next, cfg.reeval_fraction, derive_idx(seed, "reembed", i as u64))?;
        a.repack();
        report.reembedded_archives += 1;
        report.reevaluated_elites += st.reevaluated;
        report.dropped_elites += st.dropped;
        report.reeval_env_steps += st.env_steps;
    }

    if state.normalizer.is_some() && !anchors.is_empty() {
        let mut old = Vec::with_capacity(anchors.len());
        let mut new = Vec::with_capacity(anchors.len());
        for s in &anchors {
            if let (Ok(a), Ok(b)) = (state.descriptor(s), next.descriptor(s)) {
                old.push(a.to_vec());
                new.push(b.to_vec());
            }
        }
        if !old.is_empty() {
            let (l2, cos) = drift_metrics(&old, &new)?;
            report.drift_l2 = Some(l2);
            report.drift_cos = Some(cos);
        }
    }
    report.performed = true;
    report.new_version = next.version;
    Ok((next, report))
}
