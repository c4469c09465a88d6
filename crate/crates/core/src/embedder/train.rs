use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{augment, contrastive_loss_grad, distill_loss_grad, encode_episode, AugmentConfig, EmbeddingState, EncoderParams};
use crate::gridworld::{Episode, EpisodeSet};
use crate::neural::{all_finite, clip_grad_norm, Adam, AdamConfig};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryConfig {
    pub steps: usize,
    pub lr: f64,
    /// Episode sets per batch.
    pub batch: usize,
    pub anchor_fraction: f64,
    pub min_anchor_rows: usize,
    pub temperature: f64,
    pub w_contrast: f64,
    pub w_distill: f64,
    pub lambda_norm: f64,
    pub max_grad_norm: f64,
    pub augment: AugmentConfig,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            steps: 700,
            lr: 5e-4,
            batch: 32,
            anchor_fraction: 0.33,
            min_anchor_rows: 8,
            temperature: 0.15,
            w_contrast: 1.0,
            w_distill: 1.0,
            lambda_norm: 1.0,
            max_grad_norm: 0.5,
            augment: AugmentConfig::default(),
        }
    }
}

impl BoundaryConfig {
    /// Anchor rows per batch given the bank contents.
    pub fn anchor_rows(&self, n_anchor_sets: usize, n_replay_sets: usize) -> usize {
        if n_anchor_sets == 0 {
            0
        } else if n_replay_sets == 0 {
            self.batch
        } else {
            let frac = (self.anchor_fraction * self.batch as f64).round() as usize;
            frac.max(self.min_anchor_rows).min(self.batch)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryOutcome {
    pub encoder: EncoderParams,
    /// Total loss at every student step.
    pub losses: Vec<f64>,
}

/// Train a student copy of the encoder against a frozen teacher on mixed
/// anchor/replay batches. The input state is not modified.
pub fn boundary_train(
    state: &EmbeddingState,
    anchors: &[EpisodeSet],
    replay: &[EpisodeSet],
    cfg: &BoundaryConfig,
    rng: &mut Rng,
) -> Result<BoundaryOutcome> {
    let teacher = &state.encoder;
    let mut student = teacher.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(BoundaryOutcome {
            encoder: student,
            losses,
        });
    }
    let usable = |b: &[EpisodeSet]| b.iter().filter(|s| !s.episodes.is_empty()).cloned().collect::<Vec<_>>();
    let anchors = usable(anchors);
    let replay = usable(replay);
    if anchors.is_empty() && replay.is_empty() {
        return Err(Error::Insufficient("boundary training needs episode sets".into()));
    }
    let n_anchor = cfg.anchor_rows(anchors.len(), replay.len());
    let mut opt = Adam::new(student.len(), AdamConfig::with_lr(cfg.lr));
    let mut teacher_cache: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut grad = vec![0.0; student.len()];

    for _ in 0..cfg.steps {
        // (episode, anchor key) per row
        let mut rows: Vec<(&Episode, Option<(usize, usize)>)> = Vec::with_capacity(cfg.batch);
        for r in 0..cfg.batch {
            let from_anchor = r < n_anchor;
            let bank = if from_anchor { &anchors } else { &replay };
            let si = rng.random_range(0..bank.len());
            let ei = rng.random_range(0..bank[si].episodes.len());
            rows.push((&bank[si].episodes[ei], from_anchor.then_some((si, ei))));
        }
        grad.fill(0.0);
        let mut total = 0.0;

        if cfg.w_contrast != 0.0 {
            let mut c1 = Vec::with_capacity(rows.len());
            let mut c2 = Vec::with_capacity(rows.len());
            for (e, _) in &rows {
                c1.push(student.forward(&augment(e, &cfg.augment, rng))?);
                c2.push(student.forward(&augment(e, &cfg.augment, rng))?);
            }
            let z1: Vec<Vec<f64>> = c1.iter().map(|c| c.latent().to_vec()).collect();
            let z2: Vec<Vec<f64>> = c2.iter().map(|c| c.latent().to_vec()).collect();
            let (l, g1, g2) = contrastive_loss_grad(&z1, &z2, cfg.temperature)?;
            total += cfg.w_contrast * l;
            for (c, g) in c1.iter().zip(&g1).chain(c2.iter().zip(&g2)) {
                let dz: Vec<f64> = g.iter().map(|v| v * cfg.w_contrast).collect();
                student.backward(c, &dz, &mut grad);
            }
        }

        if cfg.w_distill != 0.0 && n_anchor > 0 {
            let mut caches = Vec::new();
            let mut zs = Vec::new();
            let mut zt = Vec::new();
            for (e, key) in &rows {
                let Some(key) = key else { continue };
                let c = student.forward(e)?;
                zs.push(c.latent().to_vec());
                caches.push(c);
                let t = match teacher_cache.get(key) {
                    Some(t) => t.clone(),
                    None => {
                        let t = encode_episode(teacher, e)?.to_vec();
                        teacher_cache.insert(*key, t.clone());
                        t
                    }
                };
                zt.push(t);
            }
            let mask = vec![true; zs.len()];
            let (l, g) = distill_loss_grad(&zs, &zt, &mask, cfg.lambda_norm)?;
            total += cfg.w_distill * l;
            for (c, gi) in caches.iter().zip(&g) {
                let dz: Vec<f64> = gi.iter().map(|v| v * cfg.w_distill).collect();
                student.backward(c, &dz, &mut grad);
            }
        }

        clip_grad_norm(&mut grad, cfg.max_grad_norm);
        opt.step(&mut student.data, &grad)?;
        if !all_finite(&student.data) {
            return Err(Error::Config("non-finite encoder parameters during boundary training".into()));
        }
        losses.push(total);
    }
    Ok(BoundaryOutcome {
        encoder: student,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::tests::random_episode;
    use crate::rng::rng_from;

    fn bank(n: usize, seed: u64) -> Vec<EpisodeSet> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|i| {
                let eps = (0..3).map(|_| random_episode(4 + (i % 7), &mut rng)).collect();
                EpisodeSet::new(format!("S{i}"), eps)
            })
            .collect()
    }

    #[test]
    fn zero_steps_is_identity() {
        let state = EmbeddingState::new(EncoderParams::init(&mut rng_from(0)));
        let out = boundary_train(&state, &bank(4, 1), &bank(4, 2), &BoundaryConfig { steps: 0, ..BoundaryConfig::default() }, &mut rng_from(3)).unwrap();
        assert_eq!(out.encoder, state.encoder);
    }

    #[test]
    fn distill_only_is_a_fixed_point() {
        let state = EmbeddingState::new(EncoderParams::init(&mut rng_from(0)));
        let cfg = BoundaryConfig {
            steps: 20,
            batch: 8,
            w_contrast: 0.0,
            ..BoundaryConfig::default()
        };
        let out = boundary_train(&state, &bank(6, 1), &bank(6, 2), &cfg, &mut rng_from(3)).unwrap();
        let delta: f64 = out
            .encoder
            .data
            .iter()
            .zip(&state.encoder.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(delta < 1e-6);
        assert!(out.losses.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn anchor_row_rule() {
        let cfg = BoundaryConfig::default();
        assert_eq!(cfg.anchor_rows(0, 10), 0);
        assert_eq!(cfg.anchor_rows(5, 0), 32);
        assert_eq!(cfg.anchor_rows(5, 10), 11);
        let small = BoundaryConfig { batch: 12, ..cfg };
        assert_eq!(small.anchor_rows(5, 10), 8);
    }
}
