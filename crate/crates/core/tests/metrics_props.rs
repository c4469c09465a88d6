use std::collections::BTreeMap;

use proptest::prelude::*;

use qdcl::metrics::{
    basin_analysis, compute_threshold, geometry_of, novelty_norm, retention_metrics, ttt, RunLog, ThresholdSource,
    TransferSample, VisitRecord,
};

fn curve() -> impl Strategy<Value = Vec<(usize, f64)>> {
    prop::collection::vec((1usize..5000, 0.0..1.0f64), 0..20).prop_map(|v| {
        let mut steps = 0;
        v.into_iter()
            .map(|(d, sr)| {
                steps += d;
                (steps, sr)
            })
            .collect()
    })
}

fn samples() -> impl Strategy<Value = Vec<TransferSample>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..12).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (f, y, a, b))| TransferSample {
                source: "A".into(),
                target: "B".into(),
                candidate_id: i as u64,
                f_src: f,
                y_tgt: y,
                z: vec![a, b],
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn ttt_is_monotone_in_tau(c in curve(), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let budget = 200_000;
        prop_assert!(ttt(&c, lo, budget) <= ttt(&c, hi, budget));
        prop_assert!(ttt(&c, hi, budget) <= budget);
    }

    #[test]
    fn basin_is_consistent(s in samples(), gamma in 0.1..1.0f64, tau in 0.0..1.0f64) {
        let b = basin_analysis(&s, gamma, tau).unwrap();
        prop_assert!(b.delta_local <= b.delta_good);
        prop_assert!(1 <= b.basin && b.basin <= b.good);
        prop_assert_eq!(b.deltas.len(), b.good);
        prop_assert_eq!(b.deltas[0], (0.0, 0.0));
        prop_assert!((0.0..=1.0).contains(&b.span75));
        for (rho, _) in &b.deltas {
            prop_assert!((0.0..=1.0).contains(rho));
        }
    }

    #[test]
    fn geometry_is_symmetric_and_translation_invariant(
        a in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..10),
        b in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..10),
        shift in (-5.0..5.0f64, -5.0..5.0f64),
    ) {
        let pts = |v: &[(f64, f64)], s: (f64, f64)| v.iter().map(|p| vec![p.0 + s.0, p.1 + s.1]).collect::<Vec<_>>();
        let g = geometry_of(&[("A".into(), pts(&a, (0.0, 0.0))), ("B".into(), pts(&b, (0.0, 0.0)))]).unwrap();
        let moved = geometry_of(&[("A".into(), pts(&a, shift)), ("B".into(), pts(&b, shift))]).unwrap();
        for i in 0..2 {
            prop_assert!(g.radii[i] >= 0.0);
            prop_assert!((g.radii[i] - moved.radii[i]).abs() < 1e-9);
            for j in 0..2 {
                prop_assert_eq!(g.separation[i][j], g.separation[j][i]);
                // Near-zero radii make the ratio ill-conditioned under translation.
                if g.radii[i].max(g.radii[j]) > 1e-6 {
                    let (x, y) = (g.separation[i][j], moved.separation[i][j]);
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn novelty_is_nonnegative(pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..20)) {
        let v: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        prop_assert!(novelty_norm(&v).unwrap().iter().all(|x| *x >= 0.0 && x.is_finite()));
    }
}

#[test]
fn threshold_fallback_and_calibration() {
    let t = compute_threshold("A", &[], 0.1).unwrap();
    assert_eq!(t.source, ThresholdSource::Fallback);
    let c = compute_threshold("A", &[0.8, 0.6], 0.1).unwrap();
    assert_eq!(c.source, ThresholdSource::ScratchCalibrated);
    assert!(compute_threshold("A", &[0.5], 1.5).is_err());
}

#[test]
fn retention_needs_two_visits() {
    let v = VisitRecord {
        tag: "A".into(),
        base_tag: "A".into(),
        sr_post: 0.9,
        sr_end: 0.5,
        curve: vec![(1000, 0.9)],
        budget: 1000,
    };
    let taus: BTreeMap<String, f64> = [("A".to_string(), 0.5)].into();
    assert!(retention_metrics(&RunLog { visits: vec![v.clone()] }, &taus).is_err());
    let two = RunLog { visits: vec![v.clone(), v] };
    let r = retention_metrics(&two, &taus).unwrap();
    assert!((r.bwt + 0.4).abs() < 1e-12);
    assert_eq!(r.coverage, 1.0);
    assert_eq!(r.tr, 1.0);
}
