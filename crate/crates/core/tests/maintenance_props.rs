mod common;

use proptest::prelude::*;
use rand::Rng as _;

use qdcl::gridworld::EpisodeSet;
use qdcl::maintenance::{drift_metrics, store_episode_set, Banks};
use qdcl::rng::rng_from;

use common::random_set;

proptest! {
    #[test]
    fn banks_stay_bounded(n in 0usize..200, seed in 0u64..1000) {
        let mut rng = rng_from(seed);
        let mut banks = Banks::with_capacity(seed, 8, 16);
        for _ in 0..n {
            let mut s = random_set("A", 1, 3, &mut rng);
            s.mean_sr = rng.random();
            store_episode_set(&mut banks, &s);
            prop_assert!(banks.anchors.len() <= 8);
            prop_assert!(banks.replay.len() <= 16);
        }
        prop_assert!(banks.union_len() <= 24);
        prop_assert_eq!(banks.replay.len(), n.min(16));
    }
}

#[test]
fn empty_sets_are_ignored() {
    let mut banks = Banks::new(0);
    store_episode_set(&mut banks, &EpisodeSet::new("A", vec![]));
    assert_eq!(banks.union_len(), 0);
}

#[test]
fn reservoir_is_roughly_uniform() {
    let (n, cap, trials) = (64usize, 8usize, 400u64);
    let mut counts = vec![0usize; n];
    let mut rng = rng_from(3);
    let sets: Vec<EpisodeSet> = (0..n)
        .map(|_| {
            let mut s = random_set("A", 1, 2, &mut rng);
            s.mean_sr = 0.0;
            s
        })
        .collect();
    for t in 0..trials {
        let mut banks = Banks::with_capacity(t, 4, cap);
        for s in &sets {
            store_episode_set(&mut banks, s);
        }
        for s in &banks.replay {
            counts[s.id as usize] += 1;
        }
    }
    let expect = trials as f64 * cap as f64 / n as f64;
    let early: f64 = counts[..n / 2].iter().sum::<usize>() as f64 / (n / 2) as f64;
    let late: f64 = counts[n / 2..].iter().sum::<usize>() as f64 / (n / 2) as f64;
    assert!((early / expect - 1.0).abs() < 0.15, "early {early} vs {expect}");
    assert!((late / expect - 1.0).abs() < 0.15, "late {late} vs {expect}");
}

#[test]
fn drift_of_identical_banks_is_zero() {
    let a = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
    let (l2, cos) = drift_metrics(&a, &a).unwrap();
    assert_eq!(l2, 0.0);
    assert_eq!(cos, 1.0);
}
