#![allow(dead_code)]

use rand::Rng as _;

use qdcl::agent::PolicyParams;
use qdcl::archive::Elite;
use qdcl::gridworld::{Episode, EpisodeSet, FEATURE_DIM};
use qdcl::rng::Rng;
use qdcl::transfer::LineageRecord;

/// Episode with uniform continuous features and binary indicator features.
pub fn random_episode(t: usize, rng: &mut Rng) -> Episode {
    let features = (0..t)
        .map(|_| {
            let mut f = [0.0; FEATURE_DIM];
            for (k, v) in f.iter_mut().enumerate() {
                *v = if k < 5 { rng.random() } else { f64::from(rng.random_bool(0.3) as u8) };
            }
            f
        })
        .collect();
    Episode {
        features,
        ret: rng.random(),
        success: rng.random_bool(0.5),
    }
}

pub fn random_set(tag: &str, n: usize, t: usize, rng: &mut Rng) -> EpisodeSet {
    let eps = (0..n).map(|_| random_episode(rng.random_range(2..=t), rng)).collect();
    EpisodeSet::new(tag, eps)
}

pub fn elite(id: u64, z: &[f64], fitness: f64) -> Elite {
    Elite {
        id,
        params: PolicyParams { data: vec![0.0; 2] },
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
