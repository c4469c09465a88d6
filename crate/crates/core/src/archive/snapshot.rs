//! On-disk archive snapshots: a JSON manifest per snapshot plus one
//! parameter blob and one sketch file per elite id. Elite files are written
//! once and shared between snapshots, so stale copies cost only a manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Elite, UnstructuredArchive};
use crate::agent::{arch, PolicyParams};
use crate::gridworld::{EpisodeSet, TaskSpec};
use crate::neural::{read_params, write_params};
use crate::transfer::LineageRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteEntry {
    pub id: u64,
    pub blob: String,
    pub sketch: Option<String>,
    pub fitness: f64,
    pub sr: f64,
    pub descriptor: Vec<f64>,
    pub sigma: f64,
    pub sketch_subsampled: bool,
    pub lineage: LineageRecord,
    pub source_tag: String,
    pub embedding_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub base_tag: String,
    pub d_min: f64,
    pub target: usize,
    pub capacity: usize,
    pub embedding_version: u64,
    pub z_ref: Vec<f64>,
    pub reference: Option<EpisodeSet>,
    pub spec: Option<TaskSpec>,
    pub eval_episodes: usize,
    pub next_id: u64,
    pub elites: Vec<EliteEntry>,
}

fn write_sketch(path: &Path, set: &EpisodeSet) -> Result<()> {
    let text = serde_json::to_string(set)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `archive` as `<dir>/<name>.json`, adding any elite files that are
/// not yet present under `<dir>/elites/`.
pub fn save_snapshot(archive: &UnstructuredArchive, dir: &Path, name: &str) -> Result<PathBuf> {
    let elite_dir = dir.join("elites");
    std::fs::create_dir_all(&elite_dir).map_err(|e| Error::io(&elite_dir, e))?;
    let mut entries = Vec::with_capacity(archive.len());
    for e in &archive.elites {
        let blob = format!("elites/{}.bin", e.id);
        let blob_path = dir.join(&blob);
        if !blob_path.exists() {
            write_params(&blob_path, &arch().layout, &e.params.data)?;
        }
        let sketch = match &e.sketch {
            Some(s) => {
                let rel = format!("elites/{}.sketch.json", e.id);
                let p = dir.join(&rel);
                if !p.exists() {
                    write_sketch(&p, s)?;
                }
                Some(rel)
            }
            None => None,
        };
        entries.push(EliteEntry {
            id: e.id,
            blob,
            sketch,
            fitness: e.fitness,
            sr: e.sr,
            descriptor: e.descriptor.clone(),
            sigma: e.sigma,
            sketch_subsampled: e.sketch_subsampled,
            lineage: e.lineage.clone(),
            source_tag: e.source_tag.clone(),
            embedding_version: e.embedding_version,
        });
    }
    let manifest = ArchiveManifest {
        base_tag: archive.base_tag.clone(),
        d_min: archive.d_min,
        target: archive.target,
        capacity: archive.capacity,
        embedding_version: archive.embedding_version,
        z_ref: archive.z_ref.clone(),
        reference: archive.reference.clone(),
        spec: archive.spec,
        eval_episodes: archive.eval_episodes,
        next_id: archive.next_id,
        elites: entries,
    };
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_snapshot(dir: &Path, name: &str) -> Result<UnstructuredArchive> {
    let path = dir.join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: ArchiveManifest = serde_json::from_str(&text)?;
    let mut elites = Vec::with_capacity(m.elites.len());
    for en in m.elites {
        let (layout, data) = read_params(&dir.join(&en.blob))?;
        if layout != arch().layout {
            return Err(Error::Format(format!("elite blob {} does not match the policy layout", en.blob)));
        }
        let sketch = match &en.sketch {
            Some(rel) => {
                let p = dir.join(rel);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Some(serde_json::from_str(&text)?)
            }
            None => None,
        };
        elites.push(Elite {
            id: en.id,
            params: PolicyParams { data },
            fitness: en.fitness,
            sr: en.sr,
            descriptor: en.descriptor,
            sigma: en.sigma,
            sketch,
            sketch_subsampled: en.sketch_subsampled,
            lineage: en.lineage,
            source_tag: en.source_tag,
            embedding_version: en.embedding_version,
        });
    }
    Ok(UnstructuredArchive {
        elites,
        d_min: m.d_min,
        target: m.target,
        capacity: m.capacity,
        z_ref: m.z_ref,
        reference: m.reference,
        base_tag: m.base_tag,
        embedding_version: m.embedding_version,
        spec: m.spec,
        eval_episodes: m.eval_episodes,
        next_id: m.next_id,
    })
}
