use proptest::prelude::*;

use qdcl::archive::{distance, Elite, UnstructuredArchive};
use qdcl::agent::PolicyParams;
use qdcl::transfer::{pool_candidates, select_by_rule, LineageRecord};

fn archive_of(pts: &[(f64, f64, f64)]) -> UnstructuredArchive {
    let mut a = UnstructuredArchive::new("A", 1e-4, 64, 64, 0);
    for &(x, y, f) in pts {
        let id = a.fresh_id();
        a.try_insert(Elite {
            id,
            params: PolicyParams { data: vec![0.0] },
            fitness: f,
            sr: f,
            descriptor: vec![x, y],
            sigma: 0.05,
            sketch: None,
            sketch_subsampled: false,
            lineage: LineageRecord::new(),
            source_tag: "A".into(),
            embedding_version: 0,
        })
        .unwrap();
    }
    a
}

fn min_pairwise(zs: &[&[f64]]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..zs.len() {
        for j in i + 1..zs.len() {
            m = m.min(distance(zs[i], zs[j]));
        }
    }
    m
}

/// Best achievable minimum pairwise distance over all k-subsets that
/// include `must`.
fn optimal(zs: &[Vec<f64>], k: usize, must: usize) -> f64 {
    let n = zs.len();
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k || mask & (1 << must) == 0 {
            continue;
        }
        let pick: Vec<&[f64]> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| zs[i].as_slice()).collect();
        best = best.max(min_pairwise(&pick));
    }
    best
}

proptest! {
    #[test]
    fn farthest_point_is_half_optimal(
        pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 2..10),
        k in 2usize..5,
    ) {
        let a = archive_of(&pts);
        let k = k.min(a.len());
        prop_assume!(k >= 2);
        let pool = pool_candidates(&[&a], k, 0).unwrap();
        prop_assert_eq!(pool.len(), k);
        let best = a.best().unwrap();
        prop_assert_eq!(pool[0].id, best.id);
        let zs: Vec<Vec<f64>> = a.elites.iter().map(|e| e.descriptor.clone()).collect();
        let must = a.elites.iter().position(|e| e.id == best.id).unwrap();
        let got = min_pairwise(&pool.iter().map(|e| e.descriptor.as_slice()).collect::<Vec<_>>());
        prop_assert!(got + 1e-12 >= 0.5 * optimal(&zs, k, must));
        let again = pool_candidates(&[&a], k, 0).unwrap();
        prop_assert_eq!(pool, again);
    }

    #[test]
    fn rule_picks_a_near_best_candidate(
        xs in prop::collection::vec((0.0..1.0f64, -1.0..1.0f64), 1..10),
        margin in 0.0..0.2f64,
    ) {
        let finals: Vec<f64> = xs.iter().map(|x| x.0).collect();
        let recs: Vec<f64> = xs.iter().map(|x| x.1).collect();
        let i = select_by_rule(&finals, &recs, margin).unwrap();
        let top = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(finals[i] >= top - margin);
    }
}

#[test]
fn pool_rejects_stale_archives() {
    let a = archive_of(&[(0.0, 0.0, 0.5)]);
    assert!(pool_candidates(&[&a], 2, 1).is_err());
}
