//! Within-archive novelty and between-archive separation in the shared
//! descriptor space.

use serde::{Deserialize, Serialize};

use super::EPS;
use crate::archive::{distance, UnstructuredArchive};
use crate::embedder::quantile;
use crate::{Error, Result};

/// Nearest-neighbour distance of each descriptor, divided by the median of
/// those distances.
pub fn novelty_norm(descriptors: &[Vec<f64>]) -> Result<Vec<f64>> {
    if descriptors.len() < 2 {
        return Err(Error::Insufficient("novelty needs at least two elites".into()));
    }
    let nu: Vec<f64> = (0..descriptors.len())
        .map(|i| {
            (0..descriptors.len())
                .filter(|&j| j != i)
                .map(|j| distance(&descriptors[i], &descriptors[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut sorted = nu.clone();
    sorted.sort_by(f64::total_cmp);
    let med = quantile(&sorted, 0.5);
    Ok(nu.iter().map(|v| v / (med + EPS)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub tags: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub separation: Vec<Vec<f64>>,
    /// Tags whose radius is exactly zero (separation is then ε-dominated).
    pub degenerate: Vec<String>,
}

/// Centroids, RMS radii and separation ratios for labelled descriptor sets.
pub fn geometry_of(groups: &[(String, Vec<Vec<f64>>)]) -> Result<Geometry> {
    let mut centroids = Vec::with_capacity(groups.len());
    let mut radii = Vec::with_capacity(groups.len());
    for (tag, zs) in groups {
        if zs.is_empty() {
            return Err(Error::Empty(format!("archive {tag} has no elites")));
        }
        let dim = zs[0].len();
        let mut c = vec![0.0; dim];
        for z in zs {
            for (ci, v) in c.iter_mut().zip(z) {
                *ci += v;
            }
        }
        for ci in c.iter_mut() {
            *ci /= zs.len() as f64;
        }
        let ms = zs.iter().map(|z| distance(z, &c).powi(2)).sum::<f64>() / zs.len() as f64;
        radii.push(ms.sqrt());
        centroids.push(c);
    }
    let k = groups.len();
    let mut separation = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            if a != b {
                separation[a][b] =
                    distance(&centroids[a], &centroids[b]) / ((radii[a] * radii[a] + radii[b] * radii[b]).sqrt() + EPS);
            }
        }
    }
    Ok(Geometry {
        tags: groups.iter().map(|g| g.0.clone()).collect(),
        degenerate: groups.iter().zip(&radii).filter(|(_, &r)| r == 0.0).map(|(g, _)| g.0.clone()).collect(),
        centroids,
        radii,
        separation,
    })
}

pub fn geometry(archives: &[&UnstructuredArchive]) -> Result<Geometry> {
    if let Some(first) = archives.first() {
        if let Some(bad) = archives.iter().find(|a| a.embedding_version != first.embedding_version) {
            return Err(Error::StaleDescriptor {
                elite: bad.embedding_version,
                archive: first.embedding_version,
            });
        }
    }
    let groups: Vec<(String, Vec<Vec<f64>>)> = archives
        .iter()
        .map(|a| (a.base_tag.clone(), a.elites.iter().map(|e| e.descriptor.clone()).collect()))
        .collect();
    geometry_of(&groups)
}
